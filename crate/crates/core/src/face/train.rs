use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{FaceBackboneConfig, FaceModel};
use super::ExpressionLabel;
use crate::error::{Error, Result};
use crate::latent::ImageTensor;
use crate::math;
use crate::optim::{Adam, AdamConfig};
use crate::seed;
use crate::types::EpochStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FaceTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.003,
            seed: 0,
        }
    }
}

impl FaceTrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "face epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("face learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the expression-classifier comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub model: String,
    pub parameters: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

impl AccuracyReport {
    pub const COLUMNS: [&'static str; 4] = ["Model", "Parameters", "Train Acc.", "Test Acc."];

    pub fn to_table(&self) -> String {
        format!(
            "{}\n{}\t{}\t{:.4}\t{:.4}\n",
            Self::COLUMNS.join("\t"),
            self.model,
            self.parameters,
            self.train_accuracy,
            self.test_accuracy
        )
    }
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedFaceModel {
    pub model: FaceModel,
    pub report: AccuracyReport,
    pub trace: Vec<EpochStats>,
}

/// Stratified 4:1 split: a fifth of every class (rounded down) is held out.
fn split_indices(labels: &[ExpressionLabel], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = seed::stage_rng(seed, "face/split");
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut classes = 0;
    for class in ExpressionLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        classes += 1;
        let n_test = idx.len() / 5;
        if n_test == 0 {
            return Err(Error::Dataset(format!(
                "class {class} has {} samples; the 4:1 split leaves its test set empty",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    if classes < 2 {
        return Err(Error::Dataset(
            "expression dataset must cover at least 2 classes".into(),
        ));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn accuracy(
    model: &FaceModel,
    data: &[(ImageTensor, ExpressionLabel)],
    idx: &[usize],
) -> Result<f64> {
    let hits = idx
        .par_iter()
        .map(|&i| Ok(model.predict(&data[i].0)? == data[i].1))
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / idx.len().max(1) as f64)
}

/// Fits the backbone and its 7-way head on a stratified 4:1 split with
/// cross-entropy and Adam, and reports train/test accuracy.
pub fn train_expression_classifier(
    data: &[(ImageTensor, ExpressionLabel)],
    cfg: &FaceBackboneConfig,
    opts: &FaceTrainOptions,
) -> Result<TrainedFaceModel> {
    opts.validate()?;
    let labels: Vec<ExpressionLabel> = data.iter().map(|d| d.1).collect();
    let (train, test) = split_indices(&labels, opts.seed)?;
    let mut model = FaceModel::new(cfg.clone(), seed::derive(opts.seed, "face/init"))?;
    let n_params = model.param_count();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: opts.learning_rate,
            ..AdamConfig::default()
        },
        n_params,
    );
    let mut order_rng = seed::stage_rng(opts.seed, "face/order");
    let mut order = train.clone();
    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let (image, label) = &data[i];
                    let t = model.trace(image)?;
                    let (loss, g) = math::cross_entropy(&t.logits, label.index());
                    let hit = math::argmax(&t.logits) == label.index();
                    let mut grad = vec![0.0; n_params];
                    model.backward(&t, &g, &mut grad);
                    Ok((loss, hit, grad))
                })
                .collect::<Vec<Result<(f64, bool, Vec<f64>)>>>();
            let mut grad = vec![0.0; n_params];
            for r in results {
                let (loss, hit, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        iteration: epoch,
                        value: loss,
                    });
                }
                loss_sum += loss;
                correct += usize::from(hit);
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(model.params_mut(), &grad);
        }
        trace.push(EpochStats {
            epoch,
            loss: loss_sum / train.len() as f64,
            accuracy: correct as f64 / train.len() as f64,
        });
    }
    let report = AccuracyReport {
        model: format!("cnn{:?}-m{}", cfg.conv_channels, cfg.embedding_dim),
        parameters: n_params,
        train_accuracy: accuracy(&model, data, &train)?,
        test_accuracy: accuracy(&model, data, &test)?,
        train_size: train.len(),
        test_size: test.len(),
    };
    Ok(TrainedFaceModel {
        model,
        report,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::ImageShape;

    fn blob_dataset(
        per_class: usize,
        classes: usize,
        seed: u64,
    ) -> Vec<(ImageTensor, ExpressionLabel)> {
        use rand::Rng;
        let shape = ImageShape::new(8, 8, 1);
        let mut rng = seed::rng(seed);
        let mut out = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                let pixels = (0..64)
                    .map(|p| {
                        let on = p % classes == c;
                        let base = if on { 0.8 } else { 0.2 };
                        (base + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0)
                    })
                    .collect();
                out.push((
                    ImageTensor::new(shape, pixels).unwrap(),
                    ExpressionLabel::from_index(c).unwrap(),
                ));
            }
        }
        out
    }

    fn small_cfg() -> FaceBackboneConfig {
        FaceBackboneConfig {
            image: ImageShape::new(8, 8, 1),
            conv_channels: vec![4],
            embedding_dim: 8,
        }
    }

    #[test]
    fn split_is_four_to_one_per_class() {
        let labels: Vec<_> = (0..35)
            .map(|i| ExpressionLabel::from_index(i % 7).unwrap())
            .collect();
        let (train, test) = split_indices(&labels, 3).unwrap();
        assert_eq!((train.len(), test.len()), (28, 7));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..35).collect::<Vec<_>>());
    }

    #[test]
    fn empty_test_class_is_rejected() {
        let mut labels = vec![ExpressionLabel::Neutral; 10];
        labels.extend([ExpressionLabel::Anger; 3]);
        let err = split_indices(&labels, 0).unwrap_err().to_string();
        assert!(err.contains("anger"), "{err}");
        assert!(split_indices(&[ExpressionLabel::Neutral; 10], 0).is_err());
    }

    #[test]
    fn ten_samples_fit_to_full_train_accuracy() {
        let data = blob_dataset(5, 2, 1);
        let opts = FaceTrainOptions {
            epochs: 60,
            batch_size: 4,
            learning_rate: 0.01,
            seed: 2,
        };
        let trained = train_expression_classifier(&data, &small_cfg(), &opts).unwrap();
        assert_eq!(trained.report.train_accuracy, 1.0);
        assert_eq!(trained.report.train_size + trained.report.test_size, 10);
    }

    #[test]
    fn report_mirrors_table_columns() {
        let report = AccuracyReport {
            model: "m".into(),
            parameters: 10,
            train_accuracy: 1.0,
            test_accuracy: 0.5,
            train_size: 8,
            test_size: 2,
        };
        let table = report.to_table();
        assert!(table.starts_with("Model\tParameters\tTrain Acc.\tTest Acc.\n"));
        assert!(table.contains("m\t10\t1.0000\t0.5000"));
    }
}
