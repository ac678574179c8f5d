//! Multi-scale sparse-coding scene representations.
//!
//! Images are cut into sliding-window patches at two scales, each patch is
//! described by a structure and an object descriptor, descriptors are
//! PCA-reduced and sparse-coded against learned over-complete dictionaries,
//! codes are max-pooled per scale, and the pooled vectors are concatenated
//! with a whole-image descriptor for a one-vs-rest linear SVM.

pub mod binio;
pub mod classifier;
pub mod coding;
pub mod dictionary;
pub mod error;
pub mod features;
pub mod patch_grid;
pub mod pipeline;
pub mod perturb;
pub mod pooling;
pub mod rng;
pub mod synth;

pub use binio::Fingerprint;
pub use classifier::{evaluate, train, Evaluation, LabeledSet, LinearSvmModel, SvmConfig};
pub use coding::{encode, CodingConfig, Solver, SparseCode, SparseCodeMatrix};
pub use dictionary::{DictLearnConfig, Dictionary, DictionaryPreset, ScaleBlock};
pub use error::{Error, ErrorKind, Result};
pub use features::{FeatureExtractor, FeatureVector, PcaModel, RawImage, SourceTag};
pub use patch_grid::{ImageDims, PatchRect, ScaleConfig};
pub use perturb::{PerturbationKind, PerturbationSpec, PerturbedImage};
pub use pipeline::{DatasetManifest, EvalReport, PipelineConfig, TrainedModel};
pub use pooling::{Layout, PoolingMode, PooledRepresentation, SceneRepresentation, SegmentKind};
