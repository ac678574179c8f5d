use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::config::{fingerprint_hex, PipelineConfig};
use super::data::{Extractors, FeatureDataset, FeatureSplit};
use super::manifest::{DatasetManifest, Split};
use super::model::{log_to_jsonl, train, TrainOutcome, TrainedModel, LOG_FILE, TRAIN_REPR_FILE};
use super::report::{evaluate, robustness, EvalReport};
use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::features::write_feature_file;
use crate::perturb::{perturbation_grid, PerturbationSpec};

/// Where descriptors come from: images listed in a manifest, or a
/// precomputed feature dataset.
#[derive(Debug, Clone)]
pub enum DataSource {
    Images(DatasetManifest),
    Features(FeatureDataset),
}

impl DataSource {
    pub fn classes(&self) -> &[String] {
        match self {
            DataSource::Images(m) => &m.classes,
            DataSource::Features(f) => &f.classes,
        }
    }

    /// Descriptors of both splits, read from `cache` when an extraction with
    /// the same settings and manifest is stored there.
    pub fn features(&self, cfg: &PipelineConfig, cache: Option<&Path>) -> Result<FeatureDataset> {
        let manifest = match self {
            DataSource::Features(f) => return Ok(f.clone()),
            DataSource::Images(m) => m,
        };
        let entry = cache.map(|c| c.join(cache_key(cfg, manifest)));
        if let Some(dir) = &entry {
            if dir.join(super::data::DATASET_FILE).exists() {
                tracing::info!(dir = %dir.display(), "using cached descriptors");
                return FeatureDataset::load(dir);
            }
        }
        let ex = Extractors::builtin(cfg)?;
        let split = |which: Split| -> Result<FeatureSplit> {
            let src = manifest.split(which);
            Ok(FeatureSplit {
                features: ex.extract_all(&src, None).map_err(|e| e.in_stage("extraction"))?,
                labels: manifest_labels(manifest, which),
            })
        };
        let data = FeatureDataset {
            classes: manifest.classes.clone(),
            train: split(Split::Train)?,
            test: split(Split::Test)?,
        };
        if let Some(dir) = &entry {
            data.save(dir)?;
        }
        Ok(data)
    }
}

fn manifest_labels(m: &DatasetManifest, which: Split) -> Vec<usize> {
    let samples = match which {
        Split::Train => &m.train,
        Split::Test => &m.test,
    };
    samples.iter().map(|s| s.label).collect()
}

fn cache_key(cfg: &PipelineConfig, m: &DatasetManifest) -> String {
    let (manifest, split) = m.to_texts();
    let mut h = Sha256::new();
    h.update(cfg.extraction_fingerprint());
    h.update(m.root.to_string_lossy().as_bytes());
    h.update([0]);
    h.update(manifest.as_bytes());
    h.update([0]);
    h.update(split.as_bytes());
    let digest = h.finalize();
    let mut fp = [0u8; 16];
    fp.copy_from_slice(&digest[..16]);
    fingerprint_hex(&fp)
}

/// Trains on the train split and writes all artifacts, the training log and
/// the training-set representations into `artifacts`.
pub fn run_train(cfg: &PipelineConfig, source: &DataSource, artifacts: &Path, cache: Option<&Path>) -> Result<TrainOutcome> {
    let data = source.features(cfg, cache)?;
    if data.train.features.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let out = train(cfg, &data.classes, &data.train.features, &data.train.labels)?;
    out.model.save(artifacts)?;
    write_atomic(&artifacts.join(LOG_FILE), log_to_jsonl(&out.log).as_bytes())?;
    let reps = &out.train_representations;
    let m = DMatrix::from_fn(reps.len(), out.model.layout.total_len(), |i, j| reps[i].values[j]);
    write_feature_file(&artifacts.join(TRAIN_REPR_FILE), &m)?;
    Ok(out)
}

/// Evaluates stored artifacts on the test split, clean and under every
/// perturbation in `specs`.
pub fn run_eval(cfg: &PipelineConfig, source: &DataSource, artifacts: &Path, cache: Option<&Path>, specs: &[PerturbationSpec]) -> Result<EvalReport> {
    let model = TrainedModel::load(artifacts, cfg)?;
    if model.classes != source.classes() {
        return Err(Error::InvalidArgument("dataset classes differ from the trained model's".into()));
    }
    let data = source.features(cfg, cache)?;
    let acc = evaluate(&model, &data.test.features, &data.test.labels)?;
    let rows = if specs.is_empty() {
        Vec::new()
    } else {
        let manifest = match source {
            DataSource::Images(m) => m,
            DataSource::Features(_) => {
                return Err(Error::InvalidArgument(
                    "perturbations apply to images; precomputed feature datasets cannot be perturbed".into(),
                ))
            }
        };
        robustness(&model, &Extractors::builtin(cfg)?, &manifest.split(Split::Test), specs, &acc)?
    };
    Ok(EvalReport::new(&model, &acc, rows))
}

/// The configured perturbation grid.
pub fn configured_specs(cfg: &PipelineConfig) -> Result<Vec<PerturbationSpec>> {
    let p = &cfg.perturbation;
    perturbation_grid(&p.divisors, &p.kinds, &p.seeds, p.count)
}

/// Trains in memory and reports combined, global-only and local-only
/// accuracy on the test split.
pub fn run_ablation(cfg: &PipelineConfig, source: &DataSource, cache: Option<&Path>) -> Result<EvalReport> {
    let data = source.features(cfg, cache)?;
    if data.test.features.is_empty() {
        return Err(Error::InvalidArgument("test split is empty".into()));
    }
    let out = train(cfg, &data.classes, &data.train.features, &data.train.labels)?;
    let acc = evaluate(&out.model, &data.test.features, &data.test.labels)?;
    Ok(EvalReport::new(&out.model, &acc, Vec::new()))
}

/// Writes `report` as `report.jsonl` and `report.txt` in `dir`.
pub fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
    let json = dir.join(format!("{stem}.jsonl"));
    let table = dir.join(format!("{stem}.txt"));
    write_atomic(&json, report.to_jsonl().as_bytes())?;
    write_atomic(&table, report.to_table().as_bytes())?;
    Ok((json, table))
}
