//! Skeleton gait modality: COCO17 keypoint ingestion, window normalization,
//! and a spatial-temporal graph convolutional extractor with multi-branch
//! temporal convolution.

pub mod graph;
pub mod model;
pub mod preprocess;
pub mod skeleton;
pub mod train;

pub use graph::{build_adjacency, PartitionStrategy, SkeletonGraph, COCO_EDGES};
pub use model::{gait_forward, BlockConfig, GaitModel, GaitModelConfig, TemporalBranch};
pub use preprocess::{preprocess, NormalizedWindow, WindowConfig};
pub use skeleton::{load_keypoints, Frame, SkeletonSequence, NUM_JOINTS};
pub use train::{train_gait_classifier, GaitClassifier, LabeledWindows, TrainOptions};
