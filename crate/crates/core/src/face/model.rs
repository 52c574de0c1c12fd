use serde::{Deserialize, Serialize};

use super::ExpressionLabel;
use crate::error::{Error, Result};
use crate::latent::{ImageShape, ImageTensor};
use crate::math;
use crate::nn::{self, Conv2d};
use crate::seed;
use crate::types::{FeatureVector, Modality};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceBackboneConfig {
    pub image: ImageShape,
    /// Output channels of each 3x3 conv + ReLU + 2x2 average-pool stage.
    pub conv_channels: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for FaceBackboneConfig {
    fn default() -> Self {
        Self {
            image: ImageShape::new(16, 16, 1),
            conv_channels: vec![8, 8],
            embedding_dim: 16,
        }
    }
}

impl FaceBackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config(
                "face.embedding_dim must be at least 2".into(),
            ));
        }
        if self.image.is_empty() {
            return Err(Error::Config("face.image shape must be non-empty".into()));
        }
        let (mut h, mut w) = (self.image.height, self.image.width);
        for (i, c) in self.conv_channels.iter().enumerate() {
            if *c == 0 {
                return Err(Error::Config(format!("face.conv_channels[{i}] is zero")));
            }
            if h < 2 || w < 2 {
                return Err(Error::Config(format!(
                    "face.conv_channels[{i}]: feature map {h}x{w} too small to pool"
                )));
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }
}

/// Anything that maps an image to a fixed-size embedding without changing
/// its own parameters.
pub trait FaceEmbedder: Send + Sync {
    fn embedding_dim(&self) -> usize;

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
struct ConvStage {
    conv: Conv2d,
    weight: usize,
    bias: usize,
}

/// `[conv3x3 -> relu -> avgpool2]* -> flatten -> dense(m_f) -> tanh -> dense(7)`.
#[derive(Debug, Clone)]
pub struct FaceModel {
    cfg: FaceBackboneConfig,
    stages: Vec<ConvStage>,
    flat_len: usize,
    embed_weight: usize,
    embed_bias: usize,
    head_weight: usize,
    head_bias: usize,
    params: Vec<f64>,
}

pub(crate) struct FaceTrace {
    /// Input of each conv stage, then the flattened features.
    stage_inputs: Vec<Vec<f64>>,
    stage_activations: Vec<Vec<f64>>,
    flat: Vec<f64>,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

impl FaceModel {
    fn build(cfg: FaceBackboneConfig) -> Result<(Self, usize)> {
        cfg.validate()?;
        let mut offset = 0;
        let mut take = |n: usize| {
            let at = offset;
            offset += n;
            at
        };
        let (mut h, mut w, mut c) = (cfg.image.height, cfg.image.width, cfg.image.channels);
        let mut stages = Vec::new();
        for &out in &cfg.conv_channels {
            let conv = Conv2d {
                height: h,
                width: w,
                in_channels: c,
                out_channels: out,
                kernel: 3,
            };
            stages.push(ConvStage {
                weight: take(conv.weight_len()),
                bias: take(out),
                conv,
            });
            h /= 2;
            w /= 2;
            c = out;
        }
        let flat_len = h * w * c;
        let m = cfg.embedding_dim;
        let k = ExpressionLabel::COUNT;
        let embed_weight = take(m * flat_len);
        let embed_bias = take(m);
        let head_weight = take(k * m);
        let head_bias = take(k);
        let total = offset;
        Ok((
            Self {
                cfg,
                stages,
                flat_len,
                embed_weight,
                embed_bias,
                head_weight,
                head_bias,
                params: Vec::new(),
            },
            total,
        ))
    }

    pub fn new(cfg: FaceBackboneConfig, seed: u64) -> Result<Self> {
        let (mut model, total) = Self::build(cfg)?;
        let mut rng = seed::rng(seed);
        model.params = vec![0.0; total];
        for s in &model.stages {
            let n = s.conv.weight_len();
            let fan_in = 9 * s.conv.in_channels;
            model.params[s.weight..s.weight + n]
                .copy_from_slice(&nn::init_weights(&mut rng, n, fan_in));
        }
        let m = model.cfg.embedding_dim;
        let n = m * model.flat_len;
        model.params[model.embed_weight..model.embed_weight + n]
            .copy_from_slice(&nn::init_weights(&mut rng, n, model.flat_len));
        let n = ExpressionLabel::COUNT * m;
        model.params[model.head_weight..model.head_weight + n]
            .copy_from_slice(&nn::init_weights(&mut rng, n, m));
        Ok(model)
    }

    pub fn from_params(cfg: FaceBackboneConfig, params: Vec<f64>) -> Result<Self> {
        let (mut model, total) = Self::build(cfg)?;
        if params.len() != total {
            return Err(Error::DimensionMismatch {
                context: "face model parameters",
                expected: total,
                actual: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &FaceBackboneConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn checksum(&self) -> String {
        seed::checksum(&self.params)
    }

    pub(crate) fn trace(&self, image: &ImageTensor) -> Result<FaceTrace> {
        image.ensure_shape(self.cfg.image, "face model input")?;
        let p = &self.params;
        let mut x = image.pixels().to_vec();
        let mut stage_inputs = Vec::with_capacity(self.stages.len());
        let mut stage_activations = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let c = &s.conv;
            let mut y = c.forward(
                &x,
                &p[s.weight..s.weight + c.weight_len()],
                &p[s.bias..s.bias + c.out_channels],
            );
            y.iter_mut().for_each(|v| *v = v.max(0.0));
            let (pooled, _, _) = nn::avg_pool2(&y, c.height, c.width, c.out_channels);
            stage_inputs.push(std::mem::replace(&mut x, pooled));
            stage_activations.push(y);
        }
        let m = self.cfg.embedding_dim;
        let mut embedding = nn::dense(
            &x,
            &p[self.embed_weight..self.embed_weight + m * self.flat_len],
            &p[self.embed_bias..self.embed_bias + m],
        );
        embedding.iter_mut().for_each(|v| *v = v.tanh());
        let k = ExpressionLabel::COUNT;
        let logits = nn::dense(
            &embedding,
            &p[self.head_weight..self.head_weight + k * m],
            &p[self.head_bias..self.head_bias + k],
        );
        Ok(FaceTrace {
            stage_inputs,
            stage_activations,
            flat: x,
            embedding,
            logits,
        })
    }

    pub fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.trace(image)?.logits)
    }

    pub fn predict(&self, image: &ImageTensor) -> Result<ExpressionLabel> {
        let i = math::argmax(&self.logits(image)?);
        Ok(ExpressionLabel::from_index(i).expect("seven logits"))
    }

    /// Accumulates `d(loss)/d(params)` given `d(loss)/d(logits)`.
    pub(crate) fn backward(&self, trace: &FaceTrace, grad_logits: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let m = self.cfg.embedding_dim;
        let k = ExpressionLabel::COUNT;
        let (gw, gb) = split(grad, self.head_weight, k * m, self.head_bias, k);
        let mut g_embed = nn::dense_backward(
            &trace.embedding,
            &p[self.head_weight..self.head_weight + k * m],
            grad_logits,
            gw,
            gb,
        );
        for (g, e) in g_embed.iter_mut().zip(&trace.embedding) {
            *g *= 1.0 - e * e;
        }
        let (gw, gb) = split(
            grad,
            self.embed_weight,
            m * self.flat_len,
            self.embed_bias,
            m,
        );
        let mut g_x = nn::dense_backward(
            &trace.flat,
            &p[self.embed_weight..self.embed_weight + m * self.flat_len],
            &g_embed,
            gw,
            gb,
        );
        for (i, s) in self.stages.iter().enumerate().rev() {
            let c = &s.conv;
            let mut g_y = nn::avg_pool2_backward(&g_x, c.height, c.width, c.out_channels);
            for (g, y) in g_y.iter_mut().zip(&trace.stage_activations[i]) {
                if *y <= 0.0 {
                    *g = 0.0;
                }
            }
            let (gw, gb) = split(grad, s.weight, c.weight_len(), s.bias, c.out_channels);
            g_x = c.backward(
                &trace.stage_inputs[i],
                &p[s.weight..s.weight + c.weight_len()],
                &g_y,
                gw,
                gb,
            );
        }
    }
}

fn split(
    grad: &mut [f64],
    a: usize,
    a_len: usize,
    b: usize,
    b_len: usize,
) -> (&mut [f64], &mut [f64]) {
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

impl FaceEmbedder for FaceModel {
    fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim
    }

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.trace(image)?.embedding)
    }
}

/// Mean penultimate-layer embedding over a subject's images.
pub fn extract_face_features(
    images: &[ImageTensor],
    model: &dyn FaceEmbedder,
) -> Result<FeatureVector> {
    if images.is_empty() {
        return Err(Error::InvalidValue("subject has no face images".into()));
    }
    let embeddings = images
        .iter()
        .map(|im| model.embed(im))
        .collect::<Result<Vec<_>>>()?;
    FeatureVector::new(Modality::Face, math::mean_rows(&embeddings))
}
