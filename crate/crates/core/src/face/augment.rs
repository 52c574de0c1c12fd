use super::ExpressionLabel;
use crate::direction::DirectionVector;
use crate::error::{Error, Result};
use crate::latent::{
    invert, synthesize, Generator, ImageTensor, Inversion, InversionConfig, PerceptualExtractor,
};

pub const DEFAULT_EDIT_STRENGTH: f64 = 2.0;

/// A neutral image's inversion and its six edited expressions.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub inversion: Inversion,
    pub images: Vec<(ExpressionLabel, ImageTensor)>,
}

fn direction_for(
    directions: &[DirectionVector],
    label: ExpressionLabel,
) -> Result<&DirectionVector> {
    directions
        .iter()
        .find(|d| d.target == label.as_str() && d.source == ExpressionLabel::Neutral.as_str())
        .ok_or_else(|| Error::InvalidValue(format!("no neutral->{label} direction supplied")))
}

/// Inverts `neutral` and renders one edited image per non-neutral expression
/// at `strength` along the matching `neutral -> X` direction.
pub fn augment_with_synthesized(
    neutral: &ImageTensor,
    directions: &[DirectionVector],
    generator: &dyn Generator,
    extractor: &dyn PerceptualExtractor,
    inversion: &InversionConfig,
    strength: f64,
) -> Result<Augmented> {
    let chosen = ExpressionLabel::EMOTIONS
        .iter()
        .map(|&l| Ok((l, direction_for(directions, l)?)))
        .collect::<Result<Vec<_>>>()?;
    let inv = invert(neutral, generator, extractor, inversion)?;
    let images = chosen
        .into_iter()
        .map(|(l, d)| Ok((l, synthesize(&inv.latent, d, strength, generator)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Augmented {
        inversion: inv,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{IdentityExtractor, ImageShape};
    use crate::synthetic::{ToyGenerator, ToyGeneratorSpec};

    fn setup() -> (ToyGenerator, Vec<DirectionVector>, ImageTensor) {
        let g = ToyGenerator::new(&ToyGeneratorSpec {
            latent_dim: 6,
            shape: ImageShape::new(4, 4, 1),
            seed: 5,
        })
        .unwrap();
        let dirs = ExpressionLabel::EMOTIONS
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut v = vec![0.0; 6];
                v[i] = 1.0;
                DirectionVector::from_unit(v, "neutral", l.as_str()).unwrap()
            })
            .collect();
        let neutral = g
            .forward(&crate::latent::LatentVector::new(vec![0.1; 6]).unwrap())
            .unwrap();
        (g, dirs, neutral)
    }

    fn quick_inversion() -> InversionConfig {
        InversionConfig {
            layer_weights: vec![1.0],
            max_iterations: 50,
            ..InversionConfig::default()
        }
    }

    #[test]
    fn six_distinct_labels_and_zero_strength_reconstructs() {
        let (g, dirs, neutral) = setup();
        let px = IdentityExtractor {
            shape: g.output_shape(),
        };
        let out =
            augment_with_synthesized(&neutral, &dirs, &g, &px, &quick_inversion(), 0.0).unwrap();
        let labels: Vec<_> = out.images.iter().map(|(l, _)| *l).collect();
        assert_eq!(labels, ExpressionLabel::EMOTIONS.to_vec());
        let recon = g.forward(&out.inversion.latent).unwrap();
        for (_, im) in &out.images {
            assert_eq!(im.pixels(), recon.pixels());
        }
    }

    #[test]
    fn missing_direction_is_rejected() {
        let (g, mut dirs, neutral) = setup();
        dirs.retain(|d| d.target != "fear");
        let px = IdentityExtractor {
            shape: g.output_shape(),
        };
        let err = augment_with_synthesized(&neutral, &dirs, &g, &px, &quick_inversion(), 2.0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("fear"), "{err}");
    }
}
