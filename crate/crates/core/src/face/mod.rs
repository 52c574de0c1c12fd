//! Facial-expression modality: a small convolutional expression classifier
//! trained on real plus latent-edited expressions, whose penultimate layer
//! serves as the subject's facial feature.

pub mod augment;
pub mod model;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment_with_synthesized, Augmented, DEFAULT_EDIT_STRENGTH};
pub use model::{extract_face_features, FaceBackboneConfig, FaceEmbedder, FaceModel};
pub use train::{train_expression_classifier, AccuracyReport, FaceTrainOptions, TrainedFaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionLabel {
    Neutral,
    Anger,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
}

impl ExpressionLabel {
    pub const ALL: [ExpressionLabel; 7] = [
        ExpressionLabel::Neutral,
        ExpressionLabel::Anger,
        ExpressionLabel::Disgust,
        ExpressionLabel::Fear,
        ExpressionLabel::Happiness,
        ExpressionLabel::Sadness,
        ExpressionLabel::Surprise,
    ];

    pub const EMOTIONS: [ExpressionLabel; 6] = [
        ExpressionLabel::Anger,
        ExpressionLabel::Disgust,
        ExpressionLabel::Fear,
        ExpressionLabel::Happiness,
        ExpressionLabel::Sadness,
        ExpressionLabel::Surprise,
    ];

    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExpressionLabel::Neutral => "neutral",
            ExpressionLabel::Anger => "anger",
            ExpressionLabel::Disgust => "disgust",
            ExpressionLabel::Fear => "fear",
            ExpressionLabel::Happiness => "happiness",
            ExpressionLabel::Sadness => "sadness",
            ExpressionLabel::Surprise => "surprise",
        }
    }
}

impl std::fmt::Display for ExpressionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExpressionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown expression label {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_labels_round_trip_through_names() {
        assert_eq!(ExpressionLabel::ALL.len(), 7);
        for (i, l) in ExpressionLabel::ALL.into_iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(l.as_str().parse::<ExpressionLabel>().unwrap(), l);
        }
        assert!(!ExpressionLabel::EMOTIONS.contains(&ExpressionLabel::Neutral));
    }
}
