use serde::{Deserialize, Serialize};

use super::skeleton::{joint, SkeletonSequence, NUM_JOINTS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
    pub min_confidence: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 64,
            stride: 32,
            min_confidence: 0.3,
        }
    }
}

impl WindowConfig {
    pub fn window_count(&self, frames: usize) -> usize {
        if frames < self.length {
            0
        } else {
            (frames - self.length) / self.stride + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.stride == 0 {
            return Err(Error::Config(
                "window length and stride must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config(
                "window min_confidence must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// A centered, torso-scaled window laid out `[t][joint][x, y, conf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWindow {
    pub start: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl NormalizedWindow {
    pub fn at(&self, t: usize, j: usize) -> [f64; 3] {
        let base = (t * NUM_JOINTS + j) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    /// Relabels joints: old joint `j` moves to index `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        super::graph::check_permutation(perm, NUM_JOINTS)?;
        let mut data = vec![0.0; self.data.len()];
        for t in 0..self.frames {
            for (j, &p) in perm.iter().enumerate() {
                let src = (t * NUM_JOINTS + j) * 3;
                let dst = (t * NUM_JOINTS + p) * 3;
                data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        Ok(Self { data, ..*self })
    }
}

fn midpoint(a: [f64; 3], b: [f64; 3]) -> (f64, f64) {
    (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]))
}

/// Slices `seq` into windows, centers every frame on the mid-hip, scales by
/// the window's mean torso length (mid-hip to mid-shoulder) and drops
/// low-confidence windows.
pub fn preprocess(seq: &SkeletonSequence, cfg: &WindowConfig) -> Result<Vec<NormalizedWindow>> {
    cfg.validate()?;
    let t_total = seq.len();
    if t_total < cfg.length {
        return Err(Error::InvalidValue(format!(
            "subject {}: {t_total} frames is shorter than the window length {}",
            seq.subject_id(),
            cfg.length
        )));
    }
    let count = cfg.window_count(t_total);
    let mut windows = Vec::with_capacity(count);
    let mut rejected = Vec::new();
    for w in 0..count {
        let start = w * cfg.stride;
        let frames = &seq.frames()[start..start + cfg.length];
        let mean_conf = frames
            .iter()
            .flat_map(|f| f.iter().map(|j| j[2]))
            .sum::<f64>()
            / (cfg.length * NUM_JOINTS) as f64;
        if mean_conf < cfg.min_confidence {
            rejected.push(format!(
                "window {w} (start {start}): mean confidence {mean_conf:.3}"
            ));
            continue;
        }
        let torso = frames
            .iter()
            .map(|f| {
                let (hx, hy) = midpoint(f[joint::LEFT_HIP], f[joint::RIGHT_HIP]);
                let (sx, sy) = midpoint(f[joint::LEFT_SHOULDER], f[joint::RIGHT_SHOULDER]);
                ((sx - hx).powi(2) + (sy - hy).powi(2)).sqrt()
            })
            .sum::<f64>()
            / cfg.length as f64;
        if torso.is_nan() || torso <= 1e-9 {
            rejected.push(format!("window {w} (start {start}): zero torso length"));
            continue;
        }
        let mut data = Vec::with_capacity(cfg.length * NUM_JOINTS * 3);
        for f in frames {
            let (hx, hy) = midpoint(f[joint::LEFT_HIP], f[joint::RIGHT_HIP]);
            for j in f {
                data.push((j[0] - hx) / torso);
                data.push((j[1] - hy) / torso);
                data.push(j[2]);
            }
        }
        windows.push(NormalizedWindow {
            start,
            frames: cfg.length,
            data,
        });
    }
    if windows.is_empty() {
        return Err(Error::NoWindows {
            count,
            details: rejected.join("; "),
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::skeleton::Frame;

    fn walker(t: usize, conf: f64) -> SkeletonSequence {
        let frames: Vec<Frame> = (0..t)
            .map(|k| {
                let mut f = [[0.0, 0.0, conf]; NUM_JOINTS];
                for (j, p) in f.iter_mut().enumerate() {
                    let phase = 0.2 * k as f64 + j as f64;
                    p[0] = 200.0 + 3.0 * k as f64 + 20.0 * phase.sin() + j as f64;
                    p[1] = 300.0 - 10.0 * j as f64 + 5.0 * phase.cos();
                }
                f
            })
            .collect();
        SkeletonSequence::new("w", 30.0, frames).unwrap()
    }

    #[test]
    fn window_count_matches_arithmetic() {
        let cfg = WindowConfig::default();
        assert_eq!(cfg.window_count(128), 3);
        assert_eq!(preprocess(&walker(128, 1.0), &cfg).unwrap().len(), 3);
        assert_eq!(cfg.window_count(64), 1);
        assert_eq!(cfg.window_count(63), 0);
    }

    #[test]
    fn translation_and_scale_invariance() {
        let cfg = WindowConfig::default();
        let base = preprocess(&walker(100, 1.0), &cfg).unwrap();
        let moved = walker(100, 1.0)
            .map_coords(|x, y| (x + 50.0, y - 20.0))
            .unwrap();
        let scaled = walker(100, 1.0)
            .map_coords(|x, y| (2.0 * x, 2.0 * y))
            .unwrap();
        for other in [moved, scaled] {
            let w = preprocess(&other, &cfg).unwrap();
            for (a, b) in base.iter().zip(&w) {
                for (x, y) in a.data.iter().zip(&b.data) {
                    assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn low_confidence_windows_are_dropped_with_diagnostics() {
        let cfg = WindowConfig::default();
        let err = preprocess(&walker(96, 0.1), &cfg).unwrap_err();
        match err {
            Error::NoWindows { count, details } => {
                assert_eq!(count, 2);
                assert!(details.contains("window 1"), "{details}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn short_sequence_is_rejected() {
        assert!(preprocess(&walker(10, 1.0), &WindowConfig::default()).is_err());
    }

    #[test]
    fn mid_hip_sits_at_origin() {
        let w = &preprocess(&walker(64, 1.0), &WindowConfig::default()).unwrap()[0];
        for t in 0..64 {
            let l = w.at(t, joint::LEFT_HIP);
            let r = w.at(t, joint::RIGHT_HIP);
            assert!((l[0] + r[0]).abs() < 1e-12 && (l[1] + r[1]).abs() < 1e-12);
        }
    }
}
