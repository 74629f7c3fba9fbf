//! Dense motion prediction on still images.
//!
//! The core pipeline: convert an image to opponent color space, describe
//! edge-centered patches with opponent HOG, and map each descriptor to a
//! structured motion patch with a regression forest. Predicted patches are
//! averaged into a dense flow field wherever patches overlap. Supporting
//! modules cover Middlebury .flo I/O, flow-derived descriptors (HOF/MBH),
//! evaluation metrics, and affine camera-motion compensation.

pub mod camera;
pub mod features;
pub mod flowio;
pub mod imagecore;
pub mod metrics;
pub mod seed;
pub mod srf;

pub use camera::{AffineModel, PointMatch, RansacParams};
pub use features::{
    AppearanceDescriptor, LabelKind, MotionPatch, PatchGeometry, Rect, SamplingConfig,
    TrainingCorpus, TrainingSample, DESCRIPTOR_LEN,
};
pub use flowio::{FlowDerivativeField, FlowField};
pub use imagecore::{CannyParams, EdgeMask, GradientField, ImageBuffer};
pub use metrics::ScoreReport;
pub use srf::{
    DensePrediction, ForestConfig, MotionOutput, SplitRecord, SplitType, StructuredForest, TreeNode,
};
