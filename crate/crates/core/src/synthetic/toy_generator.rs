use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{Generator, ImageShape, ImageTensor, LatentVector};
use crate::math::sigmoid;
use crate::nn;
use crate::seed;

/// Construction parameters of the toy generator; the generator is a pure
/// function of this record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyGeneratorSpec {
    pub latent_dim: usize,
    pub shape: ImageShape,
    pub seed: u64,
}

impl Default for ToyGeneratorSpec {
    fn default() -> Self {
        Self {
            latent_dim: 512,
            shape: ImageShape::new(32, 32, 1),
            seed: 0,
        }
    }
}

/// `G(c) = sigmoid(W c + b)` with a full-column-rank `W` (N x d).
///
/// The squashing keeps pixels in `(0, 1)`; [`ToyGenerator::pseudo_inverse`]
/// undoes it exactly on the generator's range.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    spec: ToyGeneratorSpec,
    /// `W` stored `[pixel][latent]`.
    weight: Vec<f64>,
    bias: Vec<f64>,
    /// `W^+` stored `[latent][pixel]`.
    pinv: Vec<f64>,
}

impl ToyGenerator {
    pub fn new(spec: &ToyGeneratorSpec) -> Result<Self> {
        let n = spec.shape.len();
        let d = spec.latent_dim;
        if d == 0 || n == 0 {
            return Err(Error::Config(
                "toy generator needs positive latent and image sizes".into(),
            ));
        }
        if d > n {
            return Err(Error::Config(format!(
                "latent dim {d} exceeds pixel count {n}; the map cannot have full column rank"
            )));
        }
        let mut rng = seed::rng(spec.seed);
        let weight = nn::init_weights(&mut rng, n * d, d);
        let bias: Vec<f64> = nn::init_weights(&mut rng, n, 4);
        let w = DMatrix::from_row_slice(n, d, &weight);
        let svd = w.clone().svd(true, true);
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        if min_sv.is_nan() || min_sv <= 1e-8 * max_sv {
            return Err(Error::Degenerate(format!(
                "toy generator map is rank deficient (singular values {min_sv:e}..{max_sv:e}); reseed"
            )));
        }
        let pinv = svd
            .pseudo_inverse(1e-12 * max_sv)
            .map_err(|e| Error::Degenerate(e.to_string()))?;
        let mut pinv_rows = Vec::with_capacity(n * d);
        for i in 0..d {
            for j in 0..n {
                pinv_rows.push(pinv[(i, j)]);
            }
        }
        Ok(Self {
            spec: *spec,
            weight,
            bias,
            pinv: pinv_rows,
        })
    }

    pub fn spec(&self) -> &ToyGeneratorSpec {
        &self.spec
    }

    /// Closed-form inverse: `W^+ (logit(image) - b)`. Exact for images in the
    /// generator's range, least-squares in logit space otherwise.
    pub fn pseudo_inverse(&self, image: &ImageTensor) -> Result<LatentVector> {
        image.ensure_shape(self.spec.shape, "toy generator inverse")?;
        let n = self.spec.shape.len();
        let clamp = 1e-12;
        let pre: Vec<f64> = image
            .pixels()
            .iter()
            .zip(&self.bias)
            .map(|(p, b)| {
                let p = p.clamp(clamp, 1.0 - clamp);
                (p / (1.0 - p)).ln() - b
            })
            .collect();
        LatentVector::new(
            (0..self.spec.latent_dim)
                .map(|i| crate::math::dot(&self.pinv[i * n..(i + 1) * n], &pre))
                .collect(),
        )
    }

    fn preactivation(&self, latent: &[f64]) -> Vec<f64> {
        let d = self.spec.latent_dim;
        self.bias
            .iter()
            .enumerate()
            .map(|(i, b)| b + crate::math::dot(&self.weight[i * d..(i + 1) * d], latent))
            .collect()
    }
}

impl Generator for ToyGenerator {
    fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn output_shape(&self) -> ImageShape {
        self.spec.shape
    }

    fn forward(&self, latent: &LatentVector) -> Result<ImageTensor> {
        self.check_latent(latent)?;
        let pixels = self
            .preactivation(latent.as_slice())
            .into_iter()
            .map(sigmoid)
            .collect();
        ImageTensor::new(self.spec.shape, pixels)
    }

    fn backward(&self, latent: &LatentVector, image_grad: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(latent)?;
        let n = self.spec.shape.len();
        if image_grad.len() != n {
            return Err(Error::DimensionMismatch {
                context: "generator image gradient",
                expected: n,
                actual: image_grad.len(),
            });
        }
        let d = self.spec.latent_dim;
        let mut grad = vec![0.0; d];
        for (i, z) in self
            .preactivation(latent.as_slice())
            .into_iter()
            .enumerate()
        {
            let p = sigmoid(z);
            let g = image_grad[i] * p * (1.0 - p);
            for (gk, w) in grad.iter_mut().zip(&self.weight[i * d..(i + 1) * d]) {
                *gk += g * w;
            }
        }
        Ok(grad)
    }
}
