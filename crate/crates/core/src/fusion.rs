//! Hybrid score-stacking fusion.
//!
//! Per modality a linear score head maps the feature `f` (dim `m`) to a
//! scalar `s`; the class head maps `[f, s]` (dim `m + 1`) to two logits. The
//! modalities' logits are summed. Class index 0 is PD and ties go to PD.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SourceTag, Subject, SubjectInfo};
use crate::error::{Error, Result};
use crate::face::{extract_face_features, FaceModel};
use crate::gait::{preprocess, GaitModel};
use crate::math;
use crate::nn;
use crate::optim::{Adam, AdamConfig};
use crate::seed;
use crate::types::{Diagnosis, EpochStats, FeatureVector, Modality};

/// Score head `m -> 1` and class head `(m + 1) -> 2` of one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchParams {
    pub score_weight: Vec<f64>,
    pub score_bias: f64,
    /// `[class][m + 1]`.
    pub class_weight: Vec<f64>,
    pub class_bias: [f64; 2],
}

impl BranchParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            score_weight: vec![0.0; dim],
            score_bias: 0.0,
            class_weight: vec![0.0; 2 * (dim + 1)],
            class_bias: [0.0; 2],
        }
    }

    pub fn random(dim: usize, rng: &mut seed::Rng) -> Self {
        Self {
            score_weight: nn::init_weights(rng, dim, dim),
            score_bias: 0.0,
            class_weight: nn::init_weights(rng, 2 * (dim + 1), dim + 1),
            class_bias: [0.0; 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.score_weight.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if m == 0 {
            return Err(Error::Config(
                "fusion branch dimension must be positive".into(),
            ));
        }
        if self.class_weight.len() != 2 * (m + 1) {
            return Err(Error::DimensionMismatch {
                context: "fusion class head weights",
                expected: 2 * (m + 1),
                actual: self.class_weight.len(),
            });
        }
        let finite = self
            .score_weight
            .iter()
            .chain(&self.class_weight)
            .chain(&self.class_bias)
            .all(|v| v.is_finite())
            && self.score_bias.is_finite();
        if !finite {
            return Err(Error::InvalidValue(
                "fusion parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    fn flat_len(dim: usize) -> usize {
        dim + 1 + 2 * (dim + 1) + 2
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.score_weight);
        out.push(self.score_bias);
        out.extend_from_slice(&self.class_weight);
        out.extend_from_slice(&self.class_bias);
    }

    fn from_flat(dim: usize, flat: &[f64]) -> Self {
        let (sw, rest) = flat.split_at(dim);
        let (sb, rest) = rest.split_at(1);
        let (cw, cb) = rest.split_at(2 * (dim + 1));
        Self {
            score_weight: sw.to_vec(),
            score_bias: sb[0],
            class_weight: cw.to_vec(),
            class_bias: [cb[0], cb[1]],
        }
    }

    fn check_feature(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "fusion branch feature",
                expected: self.dim(),
                actual: f.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, f: &[f64]) -> f64 {
        math::dot(&self.score_weight, f) + self.score_bias
    }

    /// `[f, score(f)]`, the `m + 1` fused feature.
    pub fn augmented(&self, f: &[f64]) -> Vec<f64> {
        let mut a = f.to_vec();
        a.push(self.score(f));
        a
    }

    pub fn logits(&self, f: &[f64]) -> [f64; 2] {
        let a = self.augmented(f);
        let z = nn::dense(&a, &self.class_weight, &self.class_bias);
        [z[0], z[1]]
    }

    /// Accumulates the gradient of the flat layout given `d(loss)/d(logits)`.
    fn backward(&self, f: &[f64], grad_logits: &[f64; 2], grad: &mut [f64]) {
        let m = self.dim();
        let a = self.augmented(f);
        let (g_sw, rest) = grad.split_at_mut(m);
        let (g_sb, rest) = rest.split_at_mut(1);
        let (g_cw, g_cb) = rest.split_at_mut(2 * (m + 1));
        let g_a = nn::dense_backward(&a, &self.class_weight, grad_logits, g_cw, g_cb);
        let g_s = g_a[m];
        g_sb[0] += g_s;
        g_sw.iter_mut().zip(f).for_each(|(g, x)| *g += g_s * x);
    }
}

/// Fusion layers for up to two modalities. A single-branch instance is the
/// unimodal head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridFusionParams {
    pub gait: Option<BranchParams>,
    pub face: Option<BranchParams>,
}

impl HybridFusionParams {
    pub fn new(m_g: usize, m_f: usize, seed: u64) -> Self {
        Self::for_modalities(&[(Modality::Gait, m_g), (Modality::Face, m_f)], seed)
    }

    pub fn zeros(m_g: usize, m_f: usize) -> Self {
        Self {
            gait: Some(BranchParams::zeros(m_g)),
            face: Some(BranchParams::zeros(m_f)),
        }
    }

    pub fn for_modalities(dims: &[(Modality, usize)], seed: u64) -> Self {
        let mut rng = seed::stage_rng(seed, "fusion/init");
        let mut p = Self {
            gait: None,
            face: None,
        };
        for &(m, d) in dims {
            *p.branch_mut(m) = Some(BranchParams::random(d, &mut rng));
        }
        p
    }

    pub fn branch(&self, m: Modality) -> Option<&BranchParams> {
        match m {
            Modality::Gait => self.gait.as_ref(),
            Modality::Face => self.face.as_ref(),
        }
    }

    fn branch_mut(&mut self, m: Modality) -> &mut Option<BranchParams> {
        match m {
            Modality::Gait => &mut self.gait,
            Modality::Face => &mut self.face,
        }
    }

    pub fn modalities(&self) -> Vec<Modality> {
        [Modality::Gait, Modality::Face]
            .into_iter()
            .filter(|m| self.branch(*m).is_some())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gait.is_none() && self.face.is_none() {
            return Err(Error::Config("fusion head has no branches".into()));
        }
        self.gait
            .iter()
            .chain(&self.face)
            .try_for_each(BranchParams::validate)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in self.gait.iter().chain(&self.face) {
            b.write_flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for b in self.gait.iter_mut().chain(self.face.iter_mut()) {
            let n = BranchParams::flat_len(b.dim());
            *b = BranchParams::from_flat(b.dim(), &flat[at..at + n]);
            at += n;
        }
        debug_assert_eq!(at, flat.len());
    }

    fn inputs<'a>(
        &self,
        x: &'a ModalityInputs<'a>,
    ) -> Result<Vec<(Modality, &BranchParams, &'a [f64])>> {
        self.modalities()
            .into_iter()
            .map(|m| {
                let b = self.branch(m).expect("listed modality");
                let f = x.get(m).ok_or_else(|| Error::MissingModality {
                    subject: x.subject.to_owned(),
                    modality: m.to_string(),
                })?;
                b.check_feature(f)?;
                Ok((m, b, f))
            })
            .collect()
    }

    /// Summed logits and each branch's scalar score.
    pub fn forward(&self, x: &ModalityInputs<'_>) -> Result<FusionOutput> {
        let mut logits = [0.0; 2];
        let mut scores = Vec::new();
        for (m, b, f) in self.inputs(x)? {
            let z = b.logits(f);
            logits[0] += z[0];
            logits[1] += z[1];
            scores.push((m, b.score(f)));
        }
        Ok(FusionOutput { logits, scores })
    }

    /// Gradient of the flat layout given `d(loss)/d(logits)`.
    pub fn backward(&self, x: &ModalityInputs<'_>, grad_logits: &[f64; 2]) -> Result<Vec<f64>> {
        let mut grad = Vec::with_capacity(self.to_flat().len());
        for (_, b, f) in self.inputs(x)? {
            let mut g = vec![0.0; BranchParams::flat_len(b.dim())];
            b.backward(f, grad_logits, &mut g);
            grad.extend(g);
        }
        Ok(grad)
    }
}

/// Features offered to a fusion head; `subject` labels missing-modality
/// errors.
#[derive(Debug, Clone, Copy)]
pub struct ModalityInputs<'a> {
    pub subject: &'a str,
    pub gait: Option<&'a [f64]>,
    pub face: Option<&'a [f64]>,
}

impl<'a> ModalityInputs<'a> {
    pub fn get(&self, m: Modality) -> Option<&'a [f64]> {
        match m {
            Modality::Gait => self.gait,
            Modality::Face => self.face,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub logits: [f64; 2],
    pub scores: Vec<(Modality, f64)>,
}

fn tagged(f: &FeatureVector, want: Modality) -> Result<&[f64]> {
    if f.modality != want {
        return Err(Error::InvalidValue(format!(
            "expected a {want} feature, got a {} feature",
            f.modality
        )));
    }
    Ok(&f.values)
}

/// Logits of the two-modality hybrid head.
pub fn hybrid_fuse(
    f_gait: &FeatureVector,
    f_face: &FeatureVector,
    p: &HybridFusionParams,
) -> Result<[f64; 2]> {
    if p.gait.is_none() || p.face.is_none() {
        return Err(Error::Config(
            "hybrid fusion needs both a gait and a face branch".into(),
        ));
    }
    let x = ModalityInputs {
        subject: "",
        gait: Some(tagged(f_gait, Modality::Gait)?),
        face: Some(tagged(f_face, Modality::Face)?),
    };
    Ok(p.forward(&x)?.logits)
}

/// Per-coordinate standardization fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Dataset("no features to fit a scaler".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "feature scaler rows",
                    expected: d,
                    actual: r.len(),
                });
            }
            mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut()
                .zip(*r)
                .zip(&mean)
                .for_each(|((v, x), m)| *v += (x - m).powi(2) / n);
        }
        let inv_std = var.into_iter().map(|v| 1.0 / v.sqrt().max(1e-6)).collect();
        Ok(Self { mean, inv_std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }
}

/// A fusion head plus the feature standardization it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionModel {
    pub params: HybridFusionParams,
    pub gait_scaler: Option<FeatureScaler>,
    pub face_scaler: Option<FeatureScaler>,
}

impl FusionModel {
    fn scaler(&self, m: Modality) -> Option<&FeatureScaler> {
        match m {
            Modality::Gait => self.gait_scaler.as_ref(),
            Modality::Face => self.face_scaler.as_ref(),
        }
    }

    pub fn forward(&self, features: &SubjectFeatures) -> Result<FusionOutput> {
        let scaled = |m: Modality| -> Option<Vec<f64>> {
            let raw = features.get(m)?;
            Some(match self.scaler(m) {
                Some(s) => s.apply(raw),
                None => raw.to_vec(),
            })
        };
        let (g, f) = (scaled(Modality::Gait), scaled(Modality::Face));
        self.params.forward(&ModalityInputs {
            subject: &features.id,
            gait: g.as_deref(),
            face: f.as_deref(),
        })
    }
}

/// A subject's frozen-extractor features; `None` marks a missing modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub id: String,
    pub label: Diagnosis,
    pub source: SourceTag,
    pub gait: Option<Vec<f64>>,
    pub face: Option<Vec<f64>>,
}

impl SubjectInfo for SubjectFeatures {
    fn id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> Diagnosis {
        self.label
    }

    fn source(&self) -> SourceTag {
        self.source
    }

    fn has_gait(&self) -> bool {
        self.gait.is_some()
    }

    fn has_face(&self) -> bool {
        self.face.is_some()
    }
}

impl SubjectFeatures {
    pub fn get(&self, m: Modality) -> Option<&[f64]> {
        match m {
            Modality::Gait => self.gait.as_deref(),
            Modality::Face => self.face.as_deref(),
        }
    }
}

/// The pretrained per-modality extractors, used read-only.
#[derive(Debug, Clone)]
pub struct FrozenExtractors {
    pub gait: GaitModel,
    pub face: FaceModel,
}

impl FrozenExtractors {
    pub fn checksums(&self) -> (String, String) {
        (self.gait.checksum(), self.face.checksum())
    }

    pub fn features(&self, subject: &Subject) -> Result<SubjectFeatures> {
        let gait = subject
            .gait
            .as_ref()
            .map(|seq| {
                let windows = preprocess(seq, &self.gait.config().window)?;
                Ok::<_, Error>(self.gait.forward(&windows)?.values)
            })
            .transpose()?;
        let face = if subject.images.is_empty() {
            None
        } else {
            Some(extract_face_features(&subject.face_images(), &self.face)?.values)
        };
        Ok(SubjectFeatures {
            id: subject.id.clone(),
            label: subject.label,
            source: subject.source,
            gait,
            face,
        })
    }

    pub fn features_all(&self, subjects: &[Subject]) -> Result<Vec<SubjectFeatures>> {
        subjects.par_iter().map(|s| self.features(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 100,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl FusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "fusion epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "fusion learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorChecksums {
    pub gait_before: String,
    pub gait_after: String,
    pub face_before: String,
    pub face_after: String,
}

impl ExtractorChecksums {
    pub fn unchanged(&self) -> bool {
        self.gait_before == self.gait_after && self.face_before == self.face_after
    }
}

#[derive(Debug, Clone)]
pub struct TrainedFusion {
    pub model: FusionModel,
    pub trace: Vec<EpochStats>,
    pub checksums: Option<ExtractorChecksums>,
}

/// Trains a fusion head over `modalities` on precomputed features with
/// cross-entropy on the summed logits and Adam.
pub fn train_fusion_head(
    samples: &[SubjectFeatures],
    modalities: &[Modality],
    cfg: &FusionTrainConfig,
) -> Result<TrainedFusion> {
    cfg.validate()?;
    crate::gait::train::require_both_classes(samples.iter().map(|s| &s.label))?;
    if modalities.is_empty() {
        return Err(Error::Config(
            "fusion head needs at least one modality".into(),
        ));
    }
    let mut dims = Vec::new();
    let mut model = FusionModel {
        params: HybridFusionParams {
            gait: None,
            face: None,
        },
        gait_scaler: None,
        face_scaler: None,
    };
    for &m in modalities {
        let rows = samples
            .iter()
            .map(|s| {
                s.get(m).ok_or_else(|| Error::MissingModality {
                    subject: s.id.clone(),
                    modality: m.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scaler = FeatureScaler::fit(&rows)?;
        dims.push((m, scaler.mean.len()));
        match m {
            Modality::Gait => model.gait_scaler = Some(scaler),
            Modality::Face => model.face_scaler = Some(scaler),
        }
    }
    model.params = HybridFusionParams::for_modalities(&dims, cfg.seed);
    let scaled: Vec<SubjectFeatures> = samples
        .iter()
        .map(|s| SubjectFeatures {
            id: s.id.clone(),
            label: s.label,
            source: s.source,
            gait: model
                .gait_scaler
                .as_ref()
                .zip(s.gait.as_ref())
                .map(|(sc, x)| sc.apply(x)),
            face: model
                .face_scaler
                .as_ref()
                .zip(s.face.as_ref())
                .map(|(sc, x)| sc.apply(x)),
        })
        .collect();
    let mut flat = model.params.to_flat();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        flat.len(),
    );
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    let mut rng = seed::stage_rng(cfg.seed, "fusion/order");
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; flat.len()];
            for &i in batch {
                let s = &scaled[i];
                let x = ModalityInputs {
                    subject: &s.id,
                    gait: s.gait.as_deref(),
                    face: s.face.as_deref(),
                };
                let out = model.params.forward(&x)?;
                let (loss, g) = math::cross_entropy(&out.logits, s.label.index());
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        iteration: epoch,
                        value: loss,
                    });
                }
                loss_sum += loss;
                correct += usize::from(math::argmax(&out.logits) == s.label.index());
                let g = model.params.backward(&x, &[g[0], g[1]])?;
                grad.iter_mut()
                    .zip(&g)
                    .for_each(|(a, b)| *a += b / batch.len() as f64);
            }
            adam.step(&mut flat, &grad);
            model.params.set_flat(&flat);
        }
        trace.push(EpochStats {
            epoch,
            loss: loss_sum / scaled.len() as f64,
            accuracy: correct as f64 / scaled.len() as f64,
        });
    }
    Ok(TrainedFusion {
        model,
        trace,
        checksums: None,
    })
}

/// Extracts features with the frozen extractors and trains only the fusion
/// layers.
pub fn train_fusion(
    subjects: &[Subject],
    extractors: &FrozenExtractors,
    cfg: &FusionTrainConfig,
) -> Result<TrainedFusion> {
    crate::gait::train::require_both_classes(subjects.iter().map(|s| &s.label))?;
    let (gait_before, face_before) = extractors.checksums();
    let features = extractors.features_all(subjects)?;
    let mut trained = train_fusion_head(&features, &[Modality::Gait, Modality::Face], cfg)?;
    let (gait_after, face_after) = extractors.checksums();
    trained.checksums = Some(ExtractorChecksums {
        gait_before,
        gait_after,
        face_before,
        face_after,
    });
    Ok(trained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    /// Softmax probability of PD.
    pub probability: f64,
    pub scores: Vec<(Modality, f64)>,
}

pub fn decide(subject_id: &str, out: FusionOutput) -> Prediction {
    let p = math::softmax(&out.logits);
    Prediction {
        subject_id: subject_id.to_owned(),
        diagnosis: Diagnosis::from_index(math::argmax(&out.logits)),
        probability: p[Diagnosis::Pd.index()],
        scores: out.scores,
    }
}

/// Both modalities are required; a missing one is an error rather than a
/// unimodal fallback.
pub fn predict_subject(
    subject: &Subject,
    extractors: &FrozenExtractors,
    model: &FusionModel,
) -> Result<Prediction> {
    for (present, m) in [
        (subject.gait.is_some(), Modality::Gait),
        (!subject.images.is_empty(), Modality::Face),
    ] {
        if !present {
            return Err(Error::MissingModality {
                subject: subject.id.clone(),
                modality: m.to_string(),
            });
        }
    }
    let features = extractors.features(subject)?;
    Ok(decide(&subject.id, model.forward(&features)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn fv(m: Modality, v: &[f64]) -> FeatureVector {
        FeatureVector::new(m, v.to_vec()).unwrap()
    }

    /// m_g = m_f = 2, f_gait = (1, 0), f_face = (0, 1).
    fn hand_fixture() -> HybridFusionParams {
        HybridFusionParams {
            gait: Some(BranchParams {
                score_weight: vec![1.0, 0.0],
                score_bias: 0.5,
                class_weight: vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0],
                class_bias: [0.1, -0.2],
            }),
            face: Some(BranchParams {
                score_weight: vec![0.0, 1.0],
                score_bias: -1.0,
                class_weight: vec![0.5, 0.5, 2.0, 1.0, -1.0, -3.0],
                class_bias: [0.0, 0.3],
            }),
        }
    }

    #[test]
    fn hand_computed_forward() {
        // gait: s = 1*1 + 0*0 + 0.5 = 1.5, f+ = (1, 0, 1.5)
        //   z0 = 1 + 0 + 4.5 + 0.1 = 5.6, z1 = -1 + 0 + 1.5 - 0.2 = 0.3
        // face: s = 0*0 + 1*1 - 1 = 0, f+ = (0, 1, 0)
        //   z0 = 0.5 + 0.0 = 0.5, z1 = -1 + 0.3 = -0.7
        let z = hybrid_fuse(
            &fv(Modality::Gait, &[1.0, 0.0]),
            &fv(Modality::Face, &[0.0, 1.0]),
            &hand_fixture(),
        )
        .unwrap();
        assert!(
            (z[0] - 6.1).abs() <= 1e-9 && (z[1] + 0.4).abs() <= 1e-9,
            "{z:?}"
        );
    }

    #[test]
    fn fused_feature_has_m_plus_one_entries() {
        let p = hand_fixture();
        assert_eq!(p.gait.as_ref().unwrap().augmented(&[1.0, 0.0]).len(), 3);
        let p = HybridFusionParams::new(5, 7, 0);
        assert_eq!(p.face.as_ref().unwrap().augmented(&[0.0; 7]).len(), 8);
    }

    #[test]
    fn zero_class_heads_give_zero_logits() {
        let mut p = HybridFusionParams::new(3, 2, 4);
        for b in [p.gait.as_mut().unwrap(), p.face.as_mut().unwrap()] {
            b.class_weight.iter_mut().for_each(|w| *w = 0.0);
            b.class_bias = [0.0; 2];
        }
        let z = hybrid_fuse(
            &fv(Modality::Gait, &[9.0, -3.0, 1.0]),
            &fv(Modality::Face, &[2.0, 5.0]),
            &p,
        )
        .unwrap();
        assert_eq!(z, [0.0, 0.0]);
    }

    #[test]
    fn zeroing_one_class_head_leaves_the_other_branch() {
        let mut p = HybridFusionParams::new(3, 2, 8);
        let g = [0.3, -0.2, 1.1];
        let f = [0.7, 0.4];
        let face = p.face.as_mut().unwrap();
        face.class_weight.iter_mut().for_each(|w| *w = 0.0);
        face.class_bias = [0.0; 2];
        let z = hybrid_fuse(&fv(Modality::Gait, &g), &fv(Modality::Face, &f), &p).unwrap();
        assert_eq!(z, p.gait.as_ref().unwrap().logits(&g));
    }

    #[test]
    fn dimension_mismatch_and_wrong_tag_are_rejected() {
        let p = HybridFusionParams::new(3, 2, 0);
        assert!(hybrid_fuse(
            &fv(Modality::Gait, &[1.0, 2.0]),
            &fv(Modality::Face, &[1.0, 2.0]),
            &p
        )
        .is_err());
        assert!(hybrid_fuse(
            &fv(Modality::Face, &[1.0, 2.0, 3.0]),
            &fv(Modality::Face, &[1.0, 2.0]),
            &p
        )
        .is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = HybridFusionParams::new(4, 3, 11);
        let g = [0.3, -1.2, 0.8, 0.1];
        let f = [1.5, -0.4, 0.9];
        let x = ModalityInputs {
            subject: "s",
            gait: Some(&g),
            face: Some(&f),
        };
        for target in 0..2 {
            let (_, dz) = math::cross_entropy(&p.forward(&x).unwrap().logits, target);
            let analytic = p.backward(&x, &[dz[0], dz[1]]).unwrap();
            let loss = |flat: &[f64]| {
                let mut q = p.clone();
                q.set_flat(flat);
                math::cross_entropy(&q.forward(&x).unwrap().logits, target).0
            };
            let r = gradcheck::check(loss, &p.to_flat(), &analytic, 1e-6, 1e-8, None);
            assert!(r.passes(1e-4), "{r:?}");
        }
    }

    #[test]
    fn flat_layout_round_trips() {
        let p = HybridFusionParams::new(3, 5, 2);
        let mut q = HybridFusionParams::zeros(3, 5);
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }

    #[test]
    fn decision_follows_softmax_and_ties_go_to_pd() {
        let out = |l: [f64; 2]| FusionOutput {
            logits: l,
            scores: vec![],
        };
        let d = decide("a", out([3.0, -3.0]));
        assert_eq!(d.diagnosis, Diagnosis::Pd);
        assert!((d.probability - math::sigmoid(6.0)).abs() < 1e-12);
        assert!((d.probability - 0.9975).abs() < 1e-4);
        let d = decide("a", out([0.0, 0.0]));
        assert_eq!((d.diagnosis, d.probability), (Diagnosis::Pd, 0.5));
        let d = decide("a", out([-1.0, 2.0]));
        assert_eq!(d.diagnosis, Diagnosis::NonPd);
        assert!((0.0..=1.0).contains(&d.probability));
    }

    #[test]
    fn head_learns_separable_features() {
        let mut rng = seed::rng(3);
        use rand::Rng;
        let samples: Vec<SubjectFeatures> = (0..80)
            .map(|i| {
                let label = Diagnosis::from_index(i % 2);
                let c = if label == Diagnosis::Pd { 1.0 } else { -1.0 };
                SubjectFeatures {
                    id: format!("s{i}"),
                    label,
                    source: SourceTag::Synthetic,
                    gait: Some(vec![
                        c + rng.random_range(-0.5..0.5),
                        rng.random_range(-1.0..1.0),
                    ]),
                    face: Some(vec![rng.random_range(-1.0..1.0); 3]),
                }
            })
            .collect();
        let cfg = FusionTrainConfig {
            batch_size: 4,
            ..FusionTrainConfig::default()
        };
        let t = train_fusion_head(&samples, &[Modality::Gait, Modality::Face], &cfg).unwrap();
        assert!(
            t.trace.last().unwrap().accuracy >= 0.95,
            "{:?}",
            t.trace.last()
        );
        let single = train_fusion_head(&samples[..1], &[Modality::Gait], &cfg);
        assert!(single.is_err());
    }

    #[test]
    fn defaults_match_training_protocol() {
        let c = FusionTrainConfig::default();
        assert_eq!((c.learning_rate, c.epochs, c.batch_size), (0.001, 100, 16));
    }
}
