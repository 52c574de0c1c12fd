//! Ground-truth stand-ins for data and pretrained models: an invertible toy
//! image generator, latent cluster samplers, a face world with known
//! expression directions, a parametric gait simulator and a cohort builder.

pub mod clusters;
pub mod cohort;
pub mod faces;
pub mod gait_sim;
pub mod toy_generator;

pub use clusters::sample_latent_clusters;
pub use cohort::{build_cohort, simulate_subject_gait, write_cohort, Cohort, CohortSpec};
pub use faces::{FaceWorld, FaceWorldSpec};
pub use gait_sim::{simulate_gait, GaitSimSpec};
pub use toy_generator::{ToyGenerator, ToyGeneratorSpec};
