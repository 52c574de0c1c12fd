use rand_distr::{Distribution, Normal};

use crate::direction::{DirectionVector, LabeledLatentSet};
use crate::error::{Error, Result};
use crate::latent::LatentVector;
use crate::seed;

/// Isotropic Gaussian latents around `mu_a` (class A) and `mu_b` (class B),
/// plus the oracle direction `(mu_b - mu_a) / |mu_b - mu_a|`.
pub fn sample_latent_clusters(
    mu_a: &[f64],
    mu_b: &[f64],
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<(LabeledLatentSet, DirectionVector)> {
    if mu_a.len() != mu_b.len() || mu_a.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "cluster means",
            expected: mu_a.len(),
            actual: mu_b.len(),
        });
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "cluster sigma {sigma} must be positive"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidValue(
            "need at least 2 samples per cluster".into(),
        ));
    }
    let diff: Vec<f64> = mu_b.iter().zip(mu_a).map(|(b, a)| b - a).collect();
    if diff.iter().all(|d| *d == 0.0) {
        return Err(Error::Degenerate(
            "cluster means coincide; oracle direction undefined".into(),
        ));
    }
    let oracle = DirectionVector::normalized(&diff, "A", "B")?;
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let mut draw = |mu: &[f64]| -> Result<Vec<LatentVector>> {
        (0..n)
            .map(|_| LatentVector::new(mu.iter().map(|m| m + noise.sample(&mut rng)).collect()))
            .collect()
    };
    let a = draw(mu_a)?;
    let b = draw(mu_b)?;
    Ok((LabeledLatentSet::new(a, b, "A", "B")?, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;

    #[test]
    fn sample_means_within_standard_error_bound() {
        let mu_a = vec![1.0, -2.0, 0.5];
        let mu_b = vec![0.0, 0.0, 3.0];
        let sigma = 0.7;
        let n = 1000;
        let mut hits = 0;
        for s in 0..20 {
            let (set, _) = sample_latent_clusters(&mu_a, &mu_b, sigma, n, s).unwrap();
            let (ma, _) = set.class_means();
            if math::squared_distance(&ma, &mu_a).sqrt() <= 4.0 * sigma / (n as f64).sqrt() {
                hits += 1;
            }
        }
        assert!(hits >= 19, "{hits}/20");
    }

    #[test]
    fn seed_determinism_and_unit_oracle() {
        let (a, oa) = sample_latent_clusters(&[0.0; 4], &[1.0, 2.0, 0.0, 0.0], 0.3, 5, 9).unwrap();
        let (b, ob) = sample_latent_clusters(&[0.0; 4], &[1.0, 2.0, 0.0, 0.0], 0.3, 5, 9).unwrap();
        assert_eq!(a.latents_a(), b.latents_a());
        assert_eq!(oa, ob);
        assert!((math::norm(oa.values()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_means_are_rejected() {
        assert!(sample_latent_clusters(&[1.0, 1.0], &[1.0, 1.0], 0.3, 5, 0).is_err());
        assert!(sample_latent_clusters(&[1.0], &[2.0], 0.0, 5, 0).is_err());
    }
}
