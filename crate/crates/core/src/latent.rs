//! Latent-space inversion and expression editing against a differentiable
//! generator.
//!
//! The encoder half of an encode/edit/decode round trip is realized by
//! [`invert`]: an image is encoded by optimizing the latent whose rendering
//! best matches it under a perceptual + per-pixel objective.

use serde::{Deserialize, Serialize};

use crate::direction::DirectionVector;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{self, Conv2d};
use crate::optim::{Adam, AdamConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "latent entry {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Row-major `H x W x C` image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: ImageShape,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: ImageShape, pixels: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidValue(format!("empty image shape {shape}")));
        }
        if pixels.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                context: "image pixels",
                expected: format!("{} values for {shape}", shape.len()),
                actual: pixels.len().to_string(),
            });
        }
        if let Some(i) = pixels
            .iter()
            .position(|p| !p.is_finite() || !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidValue(format!(
                "pixel {i} = {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self { shape, pixels })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub(crate) fn ensure_shape(&self, expected: ImageShape, context: &'static str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                context,
                expected: expected.to_string(),
                actual: self.shape.to_string(),
            });
        }
        Ok(())
    }
}

/// A deterministic, differentiable map from latents to images.
pub trait Generator: Send + Sync {
    fn latent_dim(&self) -> usize;

    fn output_shape(&self) -> ImageShape;

    fn forward(&self, latent: &LatentVector) -> Result<ImageTensor>;

    /// Vector-Jacobian product: given `dL/d(image)` at `G(latent)`, returns
    /// `dL/d(latent)` for any scalar loss `L`.
    fn backward(&self, latent: &LatentVector, image_grad: &[f64]) -> Result<Vec<f64>>;

    fn check_latent(&self, latent: &LatentVector) -> Result<()> {
        if latent.dim() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "generator latent",
                expected: self.latent_dim(),
                actual: latent.dim(),
            });
        }
        Ok(())
    }
}

/// A fixed stack of feature maps `C_1 .. C_k` used for perceptual distances.
pub trait PerceptualExtractor: Send + Sync {
    fn input_shape(&self) -> ImageShape;

    fn num_layers(&self) -> usize;

    /// One flat feature map per layer.
    fn features(&self, image: &ImageTensor) -> Result<Vec<Vec<f64>>>;

    /// Given per-layer gradients w.r.t. the feature maps of `image`, returns
    /// the gradient w.r.t. the image pixels.
    fn backward(&self, image: &ImageTensor, feature_grads: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// `C_1 = identity`; useful for checking loss arithmetic by hand.
#[derive(Debug, Clone)]
pub struct IdentityExtractor {
    pub shape: ImageShape,
}

impl PerceptualExtractor for IdentityExtractor {
    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn num_layers(&self) -> usize {
        1
    }

    fn features(&self, image: &ImageTensor) -> Result<Vec<Vec<f64>>> {
        image.ensure_shape(self.shape, "identity extractor input")?;
        Ok(vec![image.pixels().to_vec()])
    }

    fn backward(&self, _image: &ImageTensor, feature_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(feature_grads[0].clone())
    }
}

/// Frozen random convolutional pyramid standing in for a pretrained
/// classification backbone: each layer is a 3x3 convolution followed by tanh,
/// with 2x2 average pooling between consecutive layers.
#[derive(Debug, Clone)]
pub struct ConvPyramidExtractor {
    shape: ImageShape,
    layers: Vec<PyramidLayer>,
}

#[derive(Debug, Clone)]
struct PyramidLayer {
    conv: Conv2d,
    weight: Vec<f64>,
    bias: Vec<f64>,
    pool_after: bool,
}

struct PyramidTrace {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl ConvPyramidExtractor {
    pub fn new(shape: ImageShape, channels: &[usize], seed: u64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config(
                "perceptual extractor needs at least one layer".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let (mut h, mut w, mut c) = (shape.height, shape.width, shape.channels);
        let mut layers = Vec::with_capacity(channels.len());
        for (j, &out) in channels.iter().enumerate() {
            let conv = Conv2d {
                height: h,
                width: w,
                in_channels: c,
                out_channels: out,
                kernel: 3,
            };
            let weight = nn::init_weights(&mut rng, conv.weight_len(), 9 * c);
            let bias = vec![0.0; out];
            let pool_after = j + 1 < channels.len() && h >= 4 && w >= 4;
            layers.push(PyramidLayer {
                conv,
                weight,
                bias,
                pool_after,
            });
            if pool_after {
                h /= 2;
                w /= 2;
            }
            c = out;
        }
        Ok(Self { shape, layers })
    }

    /// Four-layer default matching `k = 4`.
    pub fn standard(shape: ImageShape, seed: u64) -> Self {
        Self::new(shape, &[4, 8, 8, 16], seed).expect("non-empty layer list")
    }

    fn trace(&self, image: &ImageTensor) -> Result<PyramidTrace> {
        image.ensure_shape(self.shape, "perceptual extractor input")?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = image.pixels().to_vec();
        for layer in &self.layers {
            let mut y = layer.conv.forward(&x, &layer.weight, &layer.bias);
            y.iter_mut().for_each(|v| *v = v.tanh());
            inputs.push(std::mem::take(&mut x));
            x = if layer.pool_after {
                nn::avg_pool2(
                    &y,
                    layer.conv.height,
                    layer.conv.width,
                    layer.conv.out_channels,
                )
                .0
            } else {
                y.clone()
            };
            outputs.push(y);
        }
        Ok(PyramidTrace { inputs, outputs })
    }
}

impl PerceptualExtractor for ConvPyramidExtractor {
    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn features(&self, image: &ImageTensor) -> Result<Vec<Vec<f64>>> {
        Ok(self.trace(image)?.outputs)
    }

    fn backward(&self, image: &ImageTensor, feature_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        let trace = self.trace(image)?;
        // Gradient flowing into the *output* of the current layer from above.
        let mut carried: Option<Vec<f64>> = None;
        for (j, layer) in self.layers.iter().enumerate().rev() {
            let conv = &layer.conv;
            let mut g = feature_grads[j].clone();
            if let Some(up) = carried.take() {
                let up = if layer.pool_after {
                    nn::avg_pool2_backward(&up, conv.height, conv.width, conv.out_channels)
                } else {
                    up
                };
                g.iter_mut().zip(&up).for_each(|(a, b)| *a += b);
            }
            for (gi, y) in g.iter_mut().zip(&trace.outputs[j]) {
                *gi *= 1.0 - y * y;
            }
            let mut gw = vec![0.0; layer.weight.len()];
            let mut gb = vec![0.0; layer.bias.len()];
            carried = Some(conv.backward(&trace.inputs[j], &layer.weight, &g, &mut gw, &mut gb));
        }
        Ok(carried.expect("at least one layer"))
    }
}

/// `sum_j (w_j / N_j) * ||C_j(a) - C_j(b)||^2`.
pub fn perceptual_loss(
    a: &ImageTensor,
    b: &ImageTensor,
    extractor: &dyn PerceptualExtractor,
    layer_weights: &[f64],
) -> Result<f64> {
    check_layer_weights(extractor, layer_weights)?;
    let expected = extractor.input_shape();
    a.ensure_shape(expected, "perceptual loss (first image)")?;
    b.ensure_shape(expected, "perceptual loss (second image)")?;
    let fa = extractor.features(a)?;
    let fb = extractor.features(b)?;
    Ok(weighted_feature_distance(&fa, &fb, layer_weights))
}

/// The layer-weighted, size-normalized squared distance between two stacks of
/// feature maps.
pub fn weighted_feature_distance(a: &[Vec<f64>], b: &[Vec<f64>], layer_weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(layer_weights)
        .map(|((x, y), w)| w / x.len() as f64 * math::squared_distance(x, y))
        .sum()
}

fn check_layer_weights(extractor: &dyn PerceptualExtractor, weights: &[f64]) -> Result<()> {
    if weights.len() != extractor.num_layers() {
        return Err(Error::DimensionMismatch {
            context: "perceptual layer weights",
            expected: extractor.num_layers(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidValue(
            "perceptual layer weights must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum InitMode {
    Zeros,
    Random(u64),
    WarmStart(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub mse_weight: f64,
    /// One weight per perceptual layer; its length is the layer count `k`.
    pub layer_weights: Vec<f64>,
    pub max_iterations: usize,
    pub step_size: f64,
    /// Multiplier applied to the step size whenever a step is rejected.
    pub step_decay: f64,
    pub min_step_size: f64,
    pub tolerance: f64,
    pub tolerance_window: usize,
    pub init: InitMode,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            mse_weight: 1.0,
            layer_weights: vec![1.0; 4],
            max_iterations: 500,
            step_size: 0.05,
            step_decay: 0.5,
            min_step_size: 1e-10,
            tolerance: 1e-6,
            tolerance_window: 10,
            init: InitMode::Zeros,
        }
    }
}

impl InversionConfig {
    pub fn layers(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mse_weight.is_finite() && self.mse_weight >= 0.0) {
            return Err(Error::Config(
                "inversion.mse_weight must be finite and >= 0".into(),
            ));
        }
        if self.layer_weights.is_empty() {
            return Err(Error::Config(
                "inversion.layer_weights must be non-empty".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_decay > 0.0 && self.step_decay < 1.0) {
            return Err(Error::Config(
                "inversion.step_size must be > 0 and step_decay in (0, 1)".into(),
            ));
        }
        if self.tolerance_window == 0 {
            return Err(Error::Config(
                "inversion.tolerance_window must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub latent: LatentVector,
    /// Objective after every accepted step, starting with the initial latent.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub rejected_steps: usize,
    pub converged: bool,
}

impl Inversion {
    pub fn final_loss(&self) -> f64 {
        *self
            .loss_trace
            .last()
            .expect("trace holds the initial objective")
    }
}

struct Objective<'a> {
    target: &'a ImageTensor,
    generator: &'a dyn Generator,
    extractor: &'a dyn PerceptualExtractor,
    target_features: Vec<Vec<f64>>,
    cfg: &'a InversionConfig,
}

impl Objective<'_> {
    fn value(&self, latent: &LatentVector) -> Result<f64> {
        let image = self.generator.forward(latent)?;
        let feats = self.extractor.features(&image)?;
        let n = image.pixels().len() as f64;
        Ok(
            weighted_feature_distance(&feats, &self.target_features, &self.cfg.layer_weights)
                + self.cfg.mse_weight / n
                    * math::squared_distance(image.pixels(), self.target.pixels()),
        )
    }

    fn gradient(&self, latent: &LatentVector) -> Result<Vec<f64>> {
        let image = self.generator.forward(latent)?;
        let feats = self.extractor.features(&image)?;
        let feature_grads: Vec<Vec<f64>> = feats
            .iter()
            .zip(&self.target_features)
            .zip(&self.cfg.layer_weights)
            .map(|((f, t), w)| {
                let scale = 2.0 * w / f.len() as f64;
                f.iter().zip(t).map(|(a, b)| scale * (a - b)).collect()
            })
            .collect();
        let mut image_grad = self.extractor.backward(&image, &feature_grads)?;
        let n = image.pixels().len() as f64;
        let scale = 2.0 * self.cfg.mse_weight / n;
        for ((g, p), t) in image_grad
            .iter_mut()
            .zip(image.pixels())
            .zip(self.target.pixels())
        {
            *g += scale * (p - t);
        }
        self.generator.backward(latent, &image_grad)
    }
}

/// Evaluates the inversion objective for `latent` (exposed for diagnostics
/// and gradient checks).
pub fn inversion_objective(
    latent: &LatentVector,
    target: &ImageTensor,
    generator: &dyn Generator,
    extractor: &dyn PerceptualExtractor,
    cfg: &InversionConfig,
) -> Result<f64> {
    objective(target, generator, extractor, cfg)?.value(latent)
}

pub fn inversion_gradient(
    latent: &LatentVector,
    target: &ImageTensor,
    generator: &dyn Generator,
    extractor: &dyn PerceptualExtractor,
    cfg: &InversionConfig,
) -> Result<Vec<f64>> {
    objective(target, generator, extractor, cfg)?.gradient(latent)
}

fn objective<'a>(
    target: &'a ImageTensor,
    generator: &'a dyn Generator,
    extractor: &'a dyn PerceptualExtractor,
    cfg: &'a InversionConfig,
) -> Result<Objective<'a>> {
    cfg.validate()?;
    check_layer_weights(extractor, &cfg.layer_weights)?;
    target.ensure_shape(generator.output_shape(), "inversion target")?;
    target.ensure_shape(extractor.input_shape(), "inversion target vs extractor")?;
    Ok(Objective {
        target,
        generator,
        extractor,
        target_features: extractor.features(target)?,
        cfg,
    })
}

/// Finds a latent whose rendering matches `target`.
///
/// Adam steps are accepted only when they do not increase the objective; a
/// rejected step shrinks the step size by `step_decay`, so the loss trace is
/// non-increasing. Stops when the relative objective change over the last
/// `tolerance_window` accepted steps drops below `tolerance`, when the
/// objective reaches exactly zero, or after `max_iterations`.
pub fn invert(
    target: &ImageTensor,
    generator: &dyn Generator,
    extractor: &dyn PerceptualExtractor,
    cfg: &InversionConfig,
) -> Result<Inversion> {
    let obj = objective(target, generator, extractor, cfg)?;
    let d = generator.latent_dim();
    let mut latent = match &cfg.init {
        InitMode::Zeros => LatentVector::zeros(d),
        InitMode::Random(s) => {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = seed::rng(*s);
            LatentVector((0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        }
        InitMode::WarmStart(v) => LatentVector::new(v.clone())?,
    };
    generator.check_latent(&latent)?;

    let mut loss = obj.value(&latent)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            value: loss,
        });
    }
    let mut trace = vec![loss];
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.step_size,
            ..AdamConfig::default()
        },
        d,
    );
    let mut rejected = 0;
    let mut converged = loss == 0.0;
    let mut iteration = 0;
    while !converged && iteration < cfg.max_iterations {
        iteration += 1;
        let grad = obj.gradient(&latent)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration,
                value: f64::NAN,
            });
        }
        let mut candidate = latent.0.clone();
        adam.step(&mut candidate, &grad);
        let candidate = LatentVector(candidate);
        let cand_loss = obj.value(&candidate)?;
        if !cand_loss.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                value: cand_loss,
            });
        }
        if cand_loss <= loss {
            latent = candidate;
            loss = cand_loss;
            trace.push(loss);
        } else {
            rejected += 1;
            adam.config.learning_rate *= cfg.step_decay;
            if adam.config.learning_rate < cfg.min_step_size {
                converged = true;
            }
            continue;
        }
        let w = cfg.tolerance_window;
        if loss == 0.0 {
            converged = true;
        } else if trace.len() > w {
            let past = trace[trace.len() - 1 - w];
            if (past - loss).abs() / past.abs().max(f64::MIN_POSITIVE) < cfg.tolerance {
                converged = true;
            }
        }
    }
    Ok(Inversion {
        latent,
        loss_trace: trace,
        iterations: iteration,
        rejected_steps: rejected,
        converged,
    })
}

/// `base + strength * direction`.
pub fn edit_latent(
    base: &LatentVector,
    direction: &DirectionVector,
    strength: f64,
) -> Result<LatentVector> {
    if base.dim() != direction.dim() {
        return Err(Error::DimensionMismatch {
            context: "latent edit direction",
            expected: base.dim(),
            actual: direction.dim(),
        });
    }
    if !strength.is_finite() {
        return Err(Error::InvalidValue(format!("edit strength {strength}")));
    }
    LatentVector::new(
        base.as_slice()
            .iter()
            .zip(direction.values())
            .map(|(b, n)| b + strength * n)
            .collect(),
    )
}

/// Renders `G(base + strength * direction)`.
pub fn synthesize(
    base: &LatentVector,
    direction: &DirectionVector,
    strength: f64,
    generator: &dyn Generator,
) -> Result<ImageTensor> {
    generator.check_latent(base)?;
    let edited = edit_latent(base, direction, strength)?;
    generator.forward(&edited)
}
