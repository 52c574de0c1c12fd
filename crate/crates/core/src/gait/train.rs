use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{GaitModel, GaitModelConfig};
use super::preprocess::NormalizedWindow;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::DenseHead;
use crate::optim::{Adam, AdamConfig};
use crate::seed;
use crate::types::{Diagnosis, EpochStats};

/// A subject's preprocessed windows and label.
#[derive(Debug, Clone)]
pub struct LabeledWindows {
    pub subject_id: String,
    pub windows: Vec<NormalizedWindow>,
    pub label: Diagnosis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A gait extractor with its two-class head.
#[derive(Debug, Clone)]
pub struct GaitClassifier {
    pub model: GaitModel,
    pub head: DenseHead,
    pub trace: Vec<EpochStats>,
}

impl GaitClassifier {
    pub fn logits(&self, windows: &[NormalizedWindow]) -> Result<Vec<f64>> {
        Ok(self.head.forward(&self.model.forward(windows)?.values))
    }

    pub fn predict(&self, windows: &[NormalizedWindow]) -> Result<Diagnosis> {
        Ok(Diagnosis::from_index(math::argmax(&self.logits(windows)?)))
    }
}

pub(crate) fn require_both_classes<'a>(labels: impl Iterator<Item = &'a Diagnosis>) -> Result<()> {
    let mut seen = [false; 2];
    for l in labels {
        seen[l.index()] = true;
    }
    if !(seen[0] && seen[1]) {
        return Err(Error::Dataset(
            "training data must contain both PD and non-PD subjects".into(),
        ));
    }
    Ok(())
}

/// Loss, hit, extractor gradient and head gradient of one sample.
type SampleGrad = (f64, bool, Vec<f64>, Vec<f64>);

/// Trains the extractor and a linear two-class head end to end with
/// cross-entropy and Adam. Per-sample gradients are computed in parallel and
/// summed in a fixed order, so results do not depend on the thread count.
pub fn train_gait_classifier(
    data: &[LabeledWindows],
    cfg: &GaitModelConfig,
    opts: &TrainOptions,
) -> Result<GaitClassifier> {
    opts.validate()?;
    require_both_classes(data.iter().map(|d| &d.label))?;
    let mut model = GaitModel::new(cfg.clone(), seed::derive(opts.seed, "gait/init"))?;
    let mut rng = seed::stage_rng(opts.seed, "gait/head");
    let mut head = DenseHead::new(cfg.embedding_dim, 2, &mut rng);
    let mut order_rng = seed::stage_rng(opts.seed, "gait/order");
    let adam_cfg = AdamConfig {
        learning_rate: opts.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam_model = Adam::new(adam_cfg, model.params().len());
    let mut adam_head = Adam::new(adam_cfg, head.params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let results: Vec<Result<SampleGrad>> = batch
                .par_iter()
                .map(|&i| {
                    let sample = &data[i];
                    let mut g_model = vec![0.0; model.params().len()];
                    let mut g_head = vec![0.0; head.params.len()];
                    let mut loss = 0.0;
                    let mut hit = false;
                    model.forward_backward(&sample.windows, &mut g_model, |feature| {
                        let logits = head.forward(feature);
                        let (l, g) = math::cross_entropy(&logits, sample.label.index());
                        loss = l;
                        hit = math::argmax(&logits) == sample.label.index();
                        head.backward(feature, &g, &mut g_head)
                    })?;
                    Ok((loss, hit, g_model, g_head))
                })
                .collect();
            let mut g_model = vec![0.0; model.params().len()];
            let mut g_head = vec![0.0; head.params.len()];
            for r in results {
                let (loss, hit, gm, gh) = r?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        iteration: epoch,
                        value: loss,
                    });
                }
                loss_sum += loss;
                correct += usize::from(hit);
                g_model.iter_mut().zip(&gm).for_each(|(a, b)| *a += b);
                g_head.iter_mut().zip(&gh).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            g_model.iter_mut().for_each(|g| *g *= scale);
            g_head.iter_mut().for_each(|g| *g *= scale);
            adam_model.step(model.params_mut(), &g_model);
            adam_head.step(&mut head.params, &g_head);
        }
        trace.push(EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(GaitClassifier { model, head, trace })
}
