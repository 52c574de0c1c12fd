//! Multimodal Parkinson's screening: latent-space expression editing, skeleton
//! gait features, a hybrid score-stacking fusion head, and the k-fold
//! evaluation protocol, with synthetic oracles for every stage.

pub mod dataset;
pub mod direction;
pub mod error;
pub mod evaluation;
pub mod face;
pub mod fusion;
pub mod gait;
pub mod gradcheck;
pub mod io;
pub mod latent;
pub mod math;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod synthetic;
pub mod types;

pub use dataset::{DatasetManifest, Subject, SubjectRecord};
pub use direction::{fit_direction, DirectionVector, FitConfig, FitMode, LabeledLatentSet};
pub use error::{Error, Result};
pub use latent::{
    Generator, ImageShape, ImageTensor, InversionConfig, LatentVector, PerceptualExtractor,
};
pub use types::{Diagnosis, EpochStats, FeatureVector, Modality};
