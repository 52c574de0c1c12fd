//! Expression classes as latent clusters pushed through the toy generator.
//!
//! Neutral sits at the origin; each of the six emotions is an orthogonal
//! offset of fixed norm. A subject is an identity latent plus an
//! expressivity factor that scales how far each expression moves from
//! neutral.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::toy_generator::{ToyGenerator, ToyGeneratorSpec};
use crate::direction::DirectionVector;
use crate::error::{Error, Result};
use crate::face::ExpressionLabel;
use crate::latent::{Generator, ImageShape, ImageTensor, LatentVector};
use crate::math;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceWorldSpec {
    pub generator: ToyGeneratorSpec,
    /// Norm of each emotion offset from neutral.
    pub expression_scale: f64,
    /// Spread of subject identity latents.
    pub identity_sigma: f64,
    /// Per-image latent jitter.
    pub sample_sigma: f64,
}

impl Default for FaceWorldSpec {
    fn default() -> Self {
        Self {
            generator: ToyGeneratorSpec {
                latent_dim: 16,
                shape: ImageShape::new(16, 16, 1),
                seed: 0,
            },
            expression_scale: 2.0,
            identity_sigma: 0.25,
            sample_sigma: 0.1,
        }
    }
}

impl FaceWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.generator.latent_dim < ExpressionLabel::EMOTIONS.len() {
            return Err(Error::Config(format!(
                "face world latent_dim {} cannot hold 6 orthogonal expression offsets",
                self.generator.latent_dim
            )));
        }
        for (name, v) in [
            ("expression_scale", self.expression_scale),
            ("identity_sigma", self.identity_sigma),
            ("sample_sigma", self.sample_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "face world {name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FaceWorld {
    spec: FaceWorldSpec,
    generator: ToyGenerator,
    /// Offset of each label from neutral, indexed by `ExpressionLabel::index`.
    offsets: Vec<Vec<f64>>,
}

/// Gram-Schmidt on Gaussian draws.
fn orthonormal(count: usize, dim: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        for b in &basis {
            let p = math::dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = math::norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

impl FaceWorld {
    pub fn new(spec: FaceWorldSpec) -> Result<Self> {
        spec.validate()?;
        let generator = ToyGenerator::new(&spec.generator)?;
        let mut rng = seed::stage_rng(spec.generator.seed, "faces/offsets");
        let d = spec.generator.latent_dim;
        let mut offsets = vec![vec![0.0; d]];
        offsets.extend(
            orthonormal(ExpressionLabel::EMOTIONS.len(), d, &mut rng)
                .into_iter()
                .map(|u| {
                    u.into_iter()
                        .map(|x| x * spec.expression_scale)
                        .collect::<Vec<_>>()
                }),
        );
        Ok(Self {
            spec,
            generator,
            offsets,
        })
    }

    pub fn spec(&self) -> &FaceWorldSpec {
        &self.spec
    }

    pub fn generator(&self) -> &ToyGenerator {
        &self.generator
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.generator.latent_dim
    }

    pub fn offset(&self, label: ExpressionLabel) -> &[f64] {
        &self.offsets[label.index()]
    }

    /// Unit direction `neutral -> label`.
    pub fn oracle_direction(&self, label: ExpressionLabel) -> Result<DirectionVector> {
        DirectionVector::normalized(
            self.offset(label),
            ExpressionLabel::Neutral.as_str(),
            label.as_str(),
        )
    }

    pub fn oracle_directions(&self) -> Result<Vec<DirectionVector>> {
        ExpressionLabel::EMOTIONS
            .iter()
            .map(|&l| self.oracle_direction(l))
            .collect()
    }

    pub fn sample_identity(&self, rng: &mut seed::Rng) -> Vec<f64> {
        let normal =
            Normal::new(0.0, self.spec.identity_sigma.max(f64::MIN_POSITIVE)).expect("sigma");
        (0..self.latent_dim()).map(|_| normal.sample(rng)).collect()
    }

    /// `identity + expressivity * offset(label) + jitter`.
    pub fn sample_latent(
        &self,
        identity: &[f64],
        label: ExpressionLabel,
        expressivity: f64,
        rng: &mut seed::Rng,
    ) -> Result<LatentVector> {
        let jitter =
            Normal::new(0.0, self.spec.sample_sigma.max(f64::MIN_POSITIVE)).expect("sigma");
        LatentVector::new(
            identity
                .iter()
                .zip(self.offset(label))
                .map(|(i, o)| i + expressivity * o + jitter.sample(rng))
                .collect(),
        )
    }

    pub fn render(
        &self,
        identity: &[f64],
        label: ExpressionLabel,
        expressivity: f64,
        rng: &mut seed::Rng,
    ) -> Result<ImageTensor> {
        self.generator
            .forward(&self.sample_latent(identity, label, expressivity, rng)?)
    }

    /// One image per expression for a single subject.
    pub fn subject_images(
        &self,
        expressivity: f64,
        rng: &mut seed::Rng,
    ) -> Result<Vec<(ExpressionLabel, ImageTensor)>> {
        let identity = self.sample_identity(rng);
        ExpressionLabel::ALL
            .iter()
            .map(|&l| Ok((l, self.render(&identity, l, expressivity, rng)?)))
            .collect()
    }

    /// Fully expressive labeled images, `per_class` of each expression,
    /// each from a fresh identity.
    pub fn expression_dataset(
        &self,
        per_class: usize,
        seed: u64,
    ) -> Result<Vec<(ImageTensor, ExpressionLabel)>> {
        let mut rng = seed::stage_rng(seed, "faces/dataset");
        let mut out = Vec::with_capacity(per_class * ExpressionLabel::COUNT);
        for _ in 0..per_class {
            for l in ExpressionLabel::ALL {
                let identity = self.sample_identity(&mut rng);
                out.push((self.render(&identity, l, 1.0, &mut rng)?, l));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_orthogonal_with_fixed_norm() {
        let world = FaceWorld::new(FaceWorldSpec::default()).unwrap();
        assert!(world
            .offset(ExpressionLabel::Neutral)
            .iter()
            .all(|x| *x == 0.0));
        for a in ExpressionLabel::EMOTIONS {
            assert!((math::norm(world.offset(a)) - world.spec().expression_scale).abs() < 1e-12);
            for b in ExpressionLabel::EMOTIONS {
                if a != b {
                    assert!(math::dot(world.offset(a), world.offset(b)).abs() < 1e-9);
                }
            }
            let dir = world.oracle_direction(a).unwrap();
            assert_eq!(dir.target, a.as_str());
            assert!((math::norm(dir.values()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let world = FaceWorld::new(FaceWorldSpec::default()).unwrap();
        let a = world.expression_dataset(3, 9).unwrap();
        let b = world.expression_dataset(3, 9).unwrap();
        assert_eq!(a.len(), 21);
        for l in ExpressionLabel::ALL {
            assert_eq!(a.iter().filter(|x| x.1 == l).count(), 3);
        }
        assert!(a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.1 == y.1));
    }

    #[test]
    fn too_small_latent_is_rejected() {
        let mut spec = FaceWorldSpec::default();
        spec.generator.latent_dim = 4;
        assert!(FaceWorld::new(spec).is_err());
    }
}
