//! Parametric side-view walker producing COCO17 sequences.
//!
//! Magnitudes are arbitrary fixed defaults picked so the two classes are
//! separable; they carry no clinical meaning. The parkinsonian class walks
//! with reduced stride and arm swing and carries a wrist tremor.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::skeleton::{joint, Frame, SkeletonSequence, NUM_JOINTS};
use crate::seed;
use crate::types::Diagnosis;

/// Peak thigh swing angle (radians) at unit stride scale.
const LEG_SWING: f64 = 0.35;
/// Peak upper-arm swing angle (radians) at unit arm-swing scale.
const ARM_SWING: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitSimSpec {
    pub class: Diagnosis,
    pub stride_scale: f64,
    pub arm_swing_scale: f64,
    pub tremor_hz: f64,
    /// Wrist tremor amplitude in pixels; zero disables the tremor.
    pub tremor_amplitude: f64,
    pub cadence_hz: f64,
    pub noise_sigma: f64,
    pub frames: usize,
    pub frame_rate: f64,
    pub body_height: f64,
    /// Forward walking speed in pixels per second.
    pub walk_speed: f64,
    pub seed: u64,
}

impl GaitSimSpec {
    pub fn control(seed: u64) -> Self {
        Self {
            class: Diagnosis::NonPd,
            stride_scale: 1.0,
            arm_swing_scale: 1.0,
            tremor_hz: 5.0,
            tremor_amplitude: 0.0,
            cadence_hz: 1.0,
            noise_sigma: 0.5,
            frames: 128,
            frame_rate: 30.0,
            body_height: 180.0,
            walk_speed: 60.0,
            seed,
        }
    }

    pub fn parkinsonian(seed: u64) -> Self {
        Self {
            class: Diagnosis::Pd,
            stride_scale: 0.5,
            arm_swing_scale: 0.3,
            tremor_amplitude: 3.0,
            ..Self::control(seed)
        }
    }

    pub fn for_class(class: Diagnosis, seed: u64) -> Self {
        match class {
            Diagnosis::Pd => Self::parkinsonian(seed),
            Diagnosis::NonPd => Self::control(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("stride_scale", self.stride_scale),
            ("arm_swing_scale", self.arm_swing_scale),
            ("tremor_amplitude", self.tremor_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("walk_speed", self.walk_speed),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "gait_sim.{name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.frame_rate > 0.0 && self.body_height > 0.0 && self.frames > 0) {
            return Err(Error::Config(
                "gait_sim frame_rate, body_height and frames must be positive".into(),
            ));
        }
        let nyquist = 0.5 * self.frame_rate;
        for (name, f) in [
            ("cadence_hz", self.cadence_hz),
            ("tremor_hz", self.tremor_hz),
        ] {
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::Config(format!(
                    "gait_sim.{name} = {f} must lie in (0, {nyquist}) for frame rate {}",
                    self.frame_rate
                )));
            }
        }
        Ok(())
    }
}

/// Renders one walking sequence for `spec`.
pub fn simulate_gait(subject_id: &str, spec: &GaitSimSpec) -> Result<SkeletonSequence> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let phase: f64 = rng.random_range(0.0..TAU);
    let tremor_phase: f64 = rng.random_range(0.0..TAU);
    let x0: f64 = rng.random_range(100.0..300.0);
    let y0: f64 = rng.random_range(250.0..350.0);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let h = spec.body_height;
    let torso = 0.30 * h;
    let thigh = 0.25 * h;
    let shank = 0.25 * h;
    let upper_arm = 0.17 * h;
    let forearm = 0.15 * h;
    let hip_off = 0.04 * h;
    let shoulder_off = 0.06 * h;

    let frames = (0..spec.frames)
        .map(|k| {
            let t = k as f64 / spec.frame_rate;
            let w = TAU * spec.cadence_hz * t + phase;
            let mut f: Frame = [[0.0, 0.0, 1.0]; NUM_JOINTS];
            let hx = x0 + spec.walk_speed * t;
            let hy = y0 - 0.01 * h * spec.stride_scale * (2.0 * w).cos();
            let mut set = |j: usize, x: f64, y: f64| {
                f[j][0] = x;
                f[j][1] = y;
            };
            let sx = hx + 0.02 * h;
            let sy = hy - torso;
            set(joint::LEFT_HIP, hx - hip_off, hy);
            set(joint::RIGHT_HIP, hx + hip_off, hy);
            set(joint::LEFT_SHOULDER, sx - shoulder_off, sy);
            set(joint::RIGHT_SHOULDER, sx + shoulder_off, sy);
            let nose_y = sy - 0.12 * h;
            set(joint::NOSE, sx + 0.05 * h, nose_y);
            set(joint::LEFT_EYE, sx + 0.04 * h, nose_y - 0.02 * h);
            set(joint::RIGHT_EYE, sx + 0.055 * h, nose_y - 0.02 * h);
            set(joint::LEFT_EAR, sx - 0.01 * h, nose_y - 0.01 * h);
            set(joint::RIGHT_EAR, sx + 0.01 * h, nose_y - 0.01 * h);

            for (side, sign) in [(0usize, 1.0), (1usize, -1.0)] {
                let theta = sign * LEG_SWING * spec.stride_scale * w.sin();
                let hip = if side == 0 {
                    hx - hip_off
                } else {
                    hx + hip_off
                };
                let (knee_j, ankle_j) = if side == 0 {
                    (joint::LEFT_KNEE, joint::LEFT_ANKLE)
                } else {
                    (joint::RIGHT_KNEE, joint::RIGHT_ANKLE)
                };
                set(knee_j, hip + thigh * theta.sin(), hy + thigh * theta.cos());
                set(
                    ankle_j,
                    hip + (thigh + shank) * theta.sin(),
                    hy + (thigh + shank) * theta.cos(),
                );

                // arms swing against the ipsilateral leg
                let alpha = -sign * ARM_SWING * spec.arm_swing_scale * w.sin();
                let shoulder = if side == 0 {
                    sx - shoulder_off
                } else {
                    sx + shoulder_off
                };
                let (elbow_j, wrist_j) = if side == 0 {
                    (joint::LEFT_ELBOW, joint::LEFT_WRIST)
                } else {
                    (joint::RIGHT_ELBOW, joint::RIGHT_WRIST)
                };
                let ex = shoulder + upper_arm * alpha.sin();
                let ey = sy + upper_arm * alpha.cos();
                set(elbow_j, ex, ey);
                let beta = alpha + 0.2;
                let tremor = TAU * spec.tremor_hz * t + tremor_phase + side as f64;
                set(
                    wrist_j,
                    ex + forearm * beta.sin() + spec.tremor_amplitude * tremor.sin(),
                    ey + forearm * beta.cos() + 0.5 * spec.tremor_amplitude * tremor.cos(),
                );
            }
            if spec.noise_sigma > 0.0 {
                for j in f.iter_mut() {
                    j[0] += noise.sample(&mut rng);
                    j[1] += noise.sample(&mut rng);
                }
            }
            f
        })
        .collect();
    SkeletonSequence::new(subject_id, spec.frame_rate, frames)
}
