use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject-level label. Class index 0 is PD; ties in the final decision go
/// to index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "PD")]
    Pd,
    #[serde(rename = "non-PD")]
    NonPd,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 2] = [Diagnosis::Pd, Diagnosis::NonPd];

    pub fn index(self) -> usize {
        match self {
            Diagnosis::Pd => 0,
            Diagnosis::NonPd => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Diagnosis::Pd
        } else {
            Diagnosis::NonPd
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Pd => "PD",
            Diagnosis::NonPd => "non-PD",
        }
    }
}

impl std::fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Gait,
    Face,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Gait => "gait",
            Modality::Face => "face",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A modality-tagged embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub modality: Modality,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(modality: Modality, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "{modality:?} feature must be non-empty and finite"
            )));
        }
        Ok(Self { modality, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Mean training loss and accuracy after one pass over the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}
