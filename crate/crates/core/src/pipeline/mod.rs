//! End-to-end orchestration: extraction, PCA, dictionaries, coding and
//! pooling, classification, evaluation and artifact persistence.

mod config;
mod data;
mod manifest;
mod model;
mod report;
mod run;

pub use config::{
    fingerprint_hex, CodingSection, DictionarySection, ExtractorSection, FeaturesSection, PcaSection, PerturbationSection,
    PipelineConfig, PoolingSection, ScalesSection, SvmSection,
};
pub use data::{Extractors, FeatureDataset, FeatureSplit, ImageFeatures, DATASET_FILE};
pub use manifest::{write_synth_dataset, DatasetManifest, ImageSource, ManifestSample, ManifestSplit, Split, MANIFEST_FILE, SPLIT_FILE};
pub use model::{log_to_jsonl, train, LogEntry, TrainOutcome, TrainedModel, View, ARTIFACTS_FILE, CONFIG_FILE, LAYOUT_FILE, LOG_FILE, TRAIN_REPR_FILE};
pub use report::{evaluate, robustness, Accuracies, EvalReport, RobustnessRow};
pub use run::{configured_specs, run_ablation, run_eval, run_train, write_report, DataSource};
