//! Latent directions between two expression classes, fit by logistic
//! regression on the labeled latents of each class.
//!
//! Two objectives are offered:
//!
//! * [`FitMode::Standard`]: ordinary logistic regression with class B as the
//!   positive class, `P(B | x) = sigmoid(a . x + b)`.
//! * [`FitMode::PaperFaithful`]: the sign-switched mapping
//!   `f = (1 - 2 y) a . x + b`, `P = sigmoid(f)`, with per-sample loss
//!   `-(y log(1 - P) + (1 - y) log P)`, accumulated exactly as written.
//!   Minimizing it drives *both* classes toward positive `a . x`, so the
//!   normal it produces need not separate A from B. It is kept for
//!   comparison; `Standard` is the default.
//!
//! In both modes the returned direction is `a / |a|`, oriented so that class
//! B projects further along it than class A. The bias is discarded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentVector;
use crate::math::{self, log_sigmoid, sigmoid};
use crate::seed;

pub const LABEL_A: u8 = 0;
pub const LABEL_B: u8 = 1;

const UNIT_TOLERANCE: f64 = 1e-9;
const MIN_NORM: f64 = 1e-12;

/// Latents of two classes; class A carries label 0 and class B label 1.
#[derive(Debug, Clone)]
pub struct LabeledLatentSet {
    latents_a: Vec<LatentVector>,
    latents_b: Vec<LatentVector>,
    pub tag_a: String,
    pub tag_b: String,
}

impl LabeledLatentSet {
    pub fn new(
        latents_a: Vec<LatentVector>,
        latents_b: Vec<LatentVector>,
        tag_a: impl Into<String>,
        tag_b: impl Into<String>,
    ) -> Result<Self> {
        if latents_a.is_empty() || latents_b.is_empty() {
            return Err(Error::InvalidValue(
                "both latent classes must be non-empty".into(),
            ));
        }
        let d = latents_a[0].dim();
        if d == 0 {
            return Err(Error::InvalidValue(
                "latent dimension must be positive".into(),
            ));
        }
        if let Some(bad) = latents_a.iter().chain(&latents_b).find(|l| l.dim() != d) {
            return Err(Error::DimensionMismatch {
                context: "labeled latent set",
                expected: d,
                actual: bad.dim(),
            });
        }
        Ok(Self {
            latents_a,
            latents_b,
            tag_a: tag_a.into(),
            tag_b: tag_b.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.latents_a[0].dim()
    }

    pub fn latents_a(&self) -> &[LatentVector] {
        &self.latents_a
    }

    pub fn latents_b(&self) -> &[LatentVector] {
        &self.latents_b
    }

    pub fn len(&self) -> usize {
        self.latents_a.len() + self.latents_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(latent, label)` pairs, A first.
    pub fn samples(&self) -> impl Iterator<Item = (&LatentVector, u8)> {
        self.latents_a
            .iter()
            .map(|l| (l, LABEL_A))
            .chain(self.latents_b.iter().map(|l| (l, LABEL_B)))
    }

    pub fn class_means(&self) -> (Vec<f64>, Vec<f64>) {
        let mean = |set: &[LatentVector]| {
            let rows: Vec<Vec<f64>> = set.iter().map(|l| l.as_slice().to_vec()).collect();
            math::mean_rows(&rows)
        };
        (mean(&self.latents_a), mean(&self.latents_b))
    }

    /// Mean projection of B minus mean projection of A onto `v`.
    pub fn projection_gap(&self, v: &[f64]) -> f64 {
        let mean_proj = |set: &[LatentVector]| {
            set.iter().map(|l| math::dot(l.as_slice(), v)).sum::<f64>() / set.len() as f64
        };
        mean_proj(&self.latents_b) - mean_proj(&self.latents_a)
    }

    /// True when the class means coincide relative to the within-class spread.
    pub fn is_degenerate(&self) -> bool {
        let (ma, mb) = self.class_means();
        let gap = math::squared_distance(&ma, &mb).sqrt();
        let spread = |set: &[LatentVector], m: &[f64]| {
            set.iter()
                .map(|l| math::squared_distance(l.as_slice(), m))
                .sum::<f64>()
                / set.len() as f64
        };
        let pooled = (0.5 * (spread(&self.latents_a, &ma) + spread(&self.latents_b, &mb))).sqrt();
        gap <= 1e-9 * pooled.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    PaperFaithful,
    Standard,
    /// Direction supplied by an oracle rather than fit.
    Oracle,
}

impl std::str::FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_faithful" | "paper-faithful" => Ok(FitMode::PaperFaithful),
            "standard" => Ok(FitMode::Standard),
            other => Err(Error::Config(format!(
                "unknown fit mode {other:?} (expected standard or paper_faithful)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    /// Coefficient of `0.5 * l2 * |a|^2`; zero disables the penalty.
    pub l2: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 2000,
            tolerance: 1e-8,
            l2: 0.0,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

/// Parameters `(a, b)` of the mapping plus the optimization record.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub normal: Vec<f64>,
    pub bias: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_history: Vec<f64>,
}

impl FitState {
    pub fn zeros(dim: usize, learning_rate: f64) -> Self {
        Self {
            normal: vec![0.0; dim],
            bias: 0.0,
            learning_rate,
            epochs: 0,
            loss_history: Vec::new(),
        }
    }
}

/// `sigmoid((1 - 2 label) a . latent + b)`.
pub fn predict_prob(latent: &LatentVector, label: u8, state: &FitState) -> Result<f64> {
    if latent.dim() != state.normal.len() {
        return Err(Error::DimensionMismatch {
            context: "predict_prob",
            expected: state.normal.len(),
            actual: latent.dim(),
        });
    }
    if label > 1 {
        return Err(Error::InvalidValue(format!("label {label} is not 0 or 1")));
    }
    Ok(sigmoid(signed_score(latent.as_slice(), label, state)))
}

fn signed_score(x: &[f64], label: u8, state: &FitState) -> f64 {
    let sign = 1.0 - 2.0 * f64::from(label);
    sign * math::dot(&state.normal, x) + state.bias
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub mode: FitMode,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub converged: bool,
    pub degenerate: bool,
}

/// A unit-norm latent direction from expression `source` to `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DirectionRecord", into = "DirectionRecord")]
pub struct DirectionVector {
    values: Vec<f64>,
    pub source: String,
    pub target: String,
    pub diagnostics: Option<FitDiagnostics>,
}

pub const DIRECTION_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirectionRecord {
    format_version: u32,
    source: String,
    target: String,
    dim: usize,
    values: Vec<f64>,
    #[serde(default)]
    diagnostics: Option<FitDiagnostics>,
}

impl TryFrom<DirectionRecord> for DirectionVector {
    type Error = Error;

    fn try_from(r: DirectionRecord) -> Result<Self> {
        if r.format_version != DIRECTION_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "direction format version {} (supported: {DIRECTION_FORMAT_VERSION})",
                r.format_version
            )));
        }
        if r.dim != r.values.len() {
            return Err(Error::DimensionMismatch {
                context: "direction record",
                expected: r.dim,
                actual: r.values.len(),
            });
        }
        let mut dir = DirectionVector::from_unit(r.values, r.source, r.target)?;
        dir.diagnostics = r.diagnostics;
        Ok(dir)
    }
}

impl From<DirectionVector> for DirectionRecord {
    fn from(d: DirectionVector) -> Self {
        DirectionRecord {
            format_version: DIRECTION_FORMAT_VERSION,
            source: d.source,
            target: d.target,
            dim: d.values.len(),
            values: d.values,
            diagnostics: d.diagnostics,
        }
    }
}

impl DirectionVector {
    /// Wraps an already unit-norm vector.
    pub fn from_unit(
        values: Vec<f64>,
        source: impl Into<String>,
        target: impl Into<String>,
    ) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(
                "direction has non-finite entries".into(),
            ));
        }
        let n = math::norm(&values);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidValue(format!("direction norm {n} is not 1")));
        }
        Ok(Self {
            values,
            source: source.into(),
            target: target.into(),
            diagnostics: None,
        })
    }

    /// Normalizes `values` to unit length.
    pub fn normalized(
        values: &[f64],
        source: impl Into<String>,
        target: impl Into<String>,
    ) -> Result<Self> {
        let n = math::norm(values);
        if !(n.is_finite() && n >= MIN_NORM) {
            return Err(Error::Degenerate(format!(
                "vector norm {n} cannot be normalized"
            )));
        }
        Self::from_unit(values.iter().map(|v| v / n).collect(), source, target)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.diagnostics.as_ref().is_some_and(|d| d.degenerate)
    }

    pub fn cosine(&self, other: &[f64]) -> f64 {
        math::cosine(&self.values, other)
    }
}

/// `a / |a|`, flipped if needed so that class B's mean projection strictly
/// exceeds class A's.
pub fn orient_and_normalize(normal: &[f64], data: &LabeledLatentSet) -> Result<DirectionVector> {
    if normal.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            context: "orient_and_normalize",
            expected: data.dim(),
            actual: normal.len(),
        });
    }
    let n = math::norm(normal);
    if n.is_nan() || n < MIN_NORM {
        return Err(Error::Degenerate(format!(
            "normal vector norm {n:e} below {MIN_NORM:e}"
        )));
    }
    let unit: Vec<f64> = normal.iter().map(|v| v / n).collect();
    let gap = data.projection_gap(&unit);
    let unit = if gap > 0.0 {
        unit
    } else if gap < 0.0 {
        unit.into_iter().map(|v| -v).collect()
    } else {
        return Err(Error::Degenerate(
            "direction is orthogonal to the class separation".into(),
        ));
    };
    DirectionVector::normalized(&unit, data.tag_a.clone(), data.tag_b.clone())
}

/// Mean loss over the set and its gradient w.r.t. `(a, b)`.
fn loss_and_grad(
    data: &LabeledLatentSet,
    state: &FitState,
    mode: FitMode,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let d = data.dim();
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad_a = vec![0.0; d];
    let mut grad_b = 0.0;
    for (latent, label) in data.samples() {
        let x = latent.as_slice();
        let y = f64::from(label);
        let (sample_loss, dscore, sign) = match mode {
            FitMode::Standard => {
                let f = math::dot(&state.normal, x) + state.bias;
                let loss = -(y * log_sigmoid(f) + (1.0 - y) * log_sigmoid(-f));
                (loss, sigmoid(f) - y, 1.0)
            }
            FitMode::PaperFaithful | FitMode::Oracle => {
                // log P and log(1 - P) for P = sigmoid(f)
                let f = signed_score(x, label, state);
                let loss = -(y * log_sigmoid(-f) + (1.0 - y) * log_sigmoid(f));
                (loss, sigmoid(f) - (1.0 - y), 1.0 - 2.0 * y)
            }
        };
        loss += sample_loss;
        for (g, xi) in grad_a.iter_mut().zip(x) {
            *g += sign * dscore * xi;
        }
        grad_b += dscore;
    }
    loss /= n;
    grad_a.iter_mut().for_each(|g| *g /= n);
    grad_b /= n;
    if l2 > 0.0 {
        loss += 0.5 * l2 * math::dot(&state.normal, &state.normal);
        for (g, a) in grad_a.iter_mut().zip(&state.normal) {
            *g += l2 * a;
        }
    }
    (loss, grad_a, grad_b)
}

/// Full-batch gradient descent on the selected objective.
pub fn fit_state(data: &LabeledLatentSet, mode: FitMode, cfg: &FitConfig) -> Result<FitState> {
    if mode == FitMode::Oracle {
        return Err(Error::Config("oracle directions are not fit".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Config(
            "direction.learning_rate must be positive".into(),
        ));
    }
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = seed::rng(cfg.seed);
    let mut state = FitState::zeros(data.dim(), cfg.learning_rate);
    for a in &mut state.normal {
        let z: f64 = StandardNormal.sample(&mut rng);
        *a = cfg.init_scale * z;
    }
    let (mut loss, mut grad_a, mut grad_b) = loss_and_grad(data, &state, mode, cfg.l2);
    state.loss_history.push(loss);
    for epoch in 1..=cfg.max_epochs {
        for (a, g) in state.normal.iter_mut().zip(&grad_a) {
            *a -= cfg.learning_rate * g;
        }
        state.bias -= cfg.learning_rate * grad_b;
        let prev = loss;
        (loss, grad_a, grad_b) = loss_and_grad(data, &state, mode, cfg.l2);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: epoch,
                value: loss,
            });
        }
        state.loss_history.push(loss);
        state.epochs = epoch;
        if (prev - loss).abs() < cfg.tolerance {
            break;
        }
    }
    Ok(state)
}

/// Fits and returns the oriented unit direction from class A to class B.
///
/// Data whose class means coincide yields a direction with the degenerate
/// flag set (and no orientation) instead of an error, unless the fitted
/// normal vanishes entirely.
pub fn fit_direction(
    data: &LabeledLatentSet,
    mode: FitMode,
    cfg: &FitConfig,
) -> Result<DirectionVector> {
    let degenerate = data.is_degenerate();
    let state = fit_state(data, mode, cfg)?;
    let mut dir = if degenerate {
        DirectionVector::normalized(&state.normal, data.tag_a.clone(), data.tag_b.clone())?
    } else {
        orient_and_normalize(&state.normal, data)?
    };
    let converged = state.epochs < cfg.max_epochs;
    dir.diagnostics = Some(FitDiagnostics {
        mode,
        initial_loss: state.loss_history[0],
        final_loss: *state.loss_history.last().expect("initial loss recorded"),
        epochs: state.epochs,
        converged,
        degenerate,
    });
    Ok(dir)
}
