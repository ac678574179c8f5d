use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{fingerprint_hex, PipelineConfig};
use super::data::ImageFeatures;
use crate::binio::{write_atomic, Fingerprint};
use crate::classifier::{self, BinaryTrace, Evaluation, LabeledSet, LinearSvmModel};
use crate::coding::code_matrix;
use crate::dictionary::{build_initial_dictionary, learn, split_words, Dictionary, KmeansConfig};
use crate::error::{Error, Result};
use crate::features::{l2_normalize, PcaModel, SourceTag};
use crate::pooling::{assemble_with_layout, pool_scale, Layout, SceneRepresentation, SegmentKind};
use crate::rng::{mix_seed, seeded};

/// Which segments of the scene representation a classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Combined,
    GlobalOnly,
    LocalOnly,
}

impl View {
    pub const ALL: [View; 3] = [View::Combined, View::GlobalOnly, View::LocalOnly];

    pub fn name(self) -> &'static str {
        match self {
            View::Combined => "combined",
            View::GlobalOnly => "global_only",
            View::LocalOnly => "local_only",
        }
    }

    /// Classifier input for this view.
    pub fn project(self, rep: &SceneRepresentation) -> Vec<f64> {
        match self {
            View::Combined => rep.values.clone(),
            View::GlobalOnly => rep.restricted(|k| !k.is_local()),
            View::LocalOnly => rep.restricted(SegmentKind::is_local),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum LogEntry {
    Pca {
        source: SourceTag,
        samples: usize,
        input_dim: usize,
        output_dim: usize,
        explained_variance: f64,
    },
    Dictionary {
        source: SourceTag,
        samples: usize,
        words_per_scale: Vec<usize>,
        objective: Vec<f64>,
    },
    Svm {
        view: View,
        class: usize,
        epochs: usize,
        converged: bool,
        primal: f64,
        dual: f64,
    },
}

/// Everything needed to turn image descriptors into class predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: PipelineConfig,
    pub classes: Vec<String>,
    /// Per local source, in [`SourceTag::LOCAL`] order.
    pub pca: Vec<PcaModel>,
    pub dictionaries: Vec<Dictionary>,
    pub layout: Layout,
    /// In [`View::ALL`] order.
    pub svms: Vec<LinearSvmModel>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<LogEntry>,
    pub train_representations: Vec<SceneRepresentation>,
}

fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let mut v: Vec<f64> = row.iter().copied().collect();
        l2_normalize(&mut v);
        row.copy_from_slice(&v);
    }
}

/// Rows of `blocks` picked by `(block, row)` references.
fn gather(blocks: &[&DMatrix<f64>], refs: &[(usize, usize)]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    DMatrix::from_fn(refs.len(), cols, |i, j| blocks[refs[i].0][(refs[i].1, j)])
}

/// All `(block, row)` references, subsampled to at most `cap` in input
/// order.
fn row_refs(blocks: &[&DMatrix<f64>], cap: usize, seed: u64) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, m)| (0..m.nrows()).map(move |r| (b, r)))
        .collect();
    if all.len() <= cap {
        return all;
    }
    let mut picked = sample(&mut seeded(seed), all.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i]).collect()
}

pub fn train(cfg: &PipelineConfig, classes: &[String], feats: &[ImageFeatures], labels: &[usize]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if feats.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "training labels",
            expected: feats.len(),
            found: labels.len(),
        });
    }
    if feats.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut present = vec![false; classes.len()];
    for &l in labels {
        *present.get_mut(l).ok_or_else(|| Error::InvalidArgument(format!("label {l} outside class list")))? = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass.in_stage("classifier"));
    }
    let n_scales = cfg.scales.divisors.len();
    for (i, f) in feats.iter().enumerate() {
        if f.local.len() != SourceTag::LOCAL.len() || f.local.iter().any(|s| s.len() != n_scales) {
            return Err(Error::InvalidArgument("descriptor bundle does not match the scale configuration".into()).at_sample(i));
        }
    }

    let mut log = Vec::new();
    let mut pcas = Vec::new();
    let mut dictionaries = Vec::new();
    for (s, &source) in SourceTag::LOCAL.iter().enumerate() {
        let stream = 16 * s as u64;
        let blocks: Vec<&DMatrix<f64>> = feats.iter().flat_map(|f| f.local[s].iter()).collect();
        let refs = row_refs(&blocks, cfg.pca.max_samples, mix_seed(cfg.seed, stream + 1));
        let pca = PcaModel::fit_up_to(&gather(&blocks, &refs), cfg.pca.output_dim)
            .map_err(|e| e.in_stage("pca"))?
            .rounded();
        log.push(LogEntry::Pca {
            source,
            samples: refs.len(),
            input_dim: pca.input_dim(),
            output_dim: pca.output_dim(),
            explained_variance: pca.explained_variance_ratio().iter().sum(),
        });

        // reduced[image][scale]
        let reduced: Vec<Vec<DMatrix<f64>>> = feats
            .par_iter()
            .map(|f| {
                f.local[s]
                    .iter()
                    .map(|m| {
                        let mut r = pca.transform_rows(m)?;
                        normalize_rows(&mut r);
                        Ok(r)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("pca"))?;

        let per_scale_rows: Vec<usize> = (0..n_scales).map(|k| reduced.iter().map(|r| r[k].nrows()).sum()).collect();
        let words = match &cfg.dictionary.words_per_scale {
            Some(w) => w.clone(),
            None => split_words(cfg.dictionary.total_words(), &per_scale_rows).map_err(|e| e.in_stage("dictionary"))?,
        };
        let per_scale: Vec<(u32, DMatrix<f64>)> = cfg
            .scale_config()
            .scale_ids()
            .enumerate()
            .map(|(k, scale_id)| {
                let scale_blocks: Vec<&DMatrix<f64>> = reduced.iter().map(|r| &r[k]).collect();
                let refs = row_refs(&scale_blocks, cfg.dictionary.kmeans_max_samples, mix_seed(cfg.seed, stream + 2 + k as u64));
                (scale_id, gather(&scale_blocks, &refs))
            })
            .collect();
        let kmeans_cfg = KmeansConfig {
            k: 0,
            max_iters: cfg.dictionary.kmeans_iters,
            seed: mix_seed(cfg.seed, stream + 8),
        };
        let d0 = build_initial_dictionary(&per_scale, &words, &kmeans_cfg, source).map_err(|e| e.in_stage("dictionary"))?;
        let all_blocks: Vec<&DMatrix<f64>> = reduced.iter().flatten().collect();
        let refs = row_refs(&all_blocks, cfg.dictionary.learn_max_samples, mix_seed(cfg.seed, stream + 9));
        let learned = learn(&d0, &gather(&all_blocks, &refs), &cfg.dictionary.learn_config(mix_seed(cfg.seed, stream + 10)))
            .map_err(|e| e.in_stage("dictionary"))?;
        tracing::info!(
            source = %source,
            columns = learned.dictionary.columns(),
            objective = ?learned.objective_trace.last(),
            "dictionary learned"
        );
        log.push(LogEntry::Dictionary {
            source,
            samples: refs.len(),
            words_per_scale: words,
            objective: learned.objective_trace,
        });
        pcas.push(pca);
        dictionaries.push(learned.dictionary.rounded());
    }

    let global_dim = feats[0].global.len();
    let local_dims: Vec<(SourceTag, usize)> = SourceTag::LOCAL.iter().copied().zip(dictionaries.iter().map(Dictionary::columns)).collect();
    let scale_ids: Vec<u32> = cfg.scale_config().scale_ids().collect();
    let mut model = TrainedModel {
        config: cfg.clone(),
        classes: classes.to_vec(),
        pca: pcas,
        dictionaries,
        layout: Layout::new(global_dim, &local_dims, &scale_ids),
        svms: Vec::new(),
    };
    let reps = model.represent_all(feats)?;
    for view in View::ALL {
        let rows: Vec<Vec<f64>> = reps.iter().map(|r| view.project(r)).collect();
        let data = LabeledSet::from_rows(&rows, labels.to_vec(), classes.len())?;
        let (svm, traces) = classifier::train(&data, &cfg.svm_config()).map_err(|e| e.in_stage("classifier"))?;
        for (class, t) in traces.iter().enumerate() {
            log.push(svm_log(view, class, t));
        }
        model.svms.push(svm.rounded());
    }
    Ok(TrainOutcome {
        model,
        log,
        train_representations: reps,
    })
}

fn svm_log(view: View, class: usize, t: &BinaryTrace) -> LogEntry {
    LogEntry::Svm {
        view,
        class,
        epochs: t.epochs,
        converged: t.converged,
        primal: t.primal.last().copied().unwrap_or(f64::NAN),
        dual: t.dual.last().copied().unwrap_or(f64::NAN),
    }
}

pub const ARTIFACTS_FILE: &str = "artifacts.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const LAYOUT_FILE: &str = "layout.tsv";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const TRAIN_REPR_FILE: &str = "train_repr.ssrf";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ArtifactIndex {
    fingerprint: String,
    classes: Vec<String>,
    representation_dim: usize,
    files: Vec<String>,
}

fn pca_file(source: SourceTag) -> String {
    format!("pca_{source}.ssrp")
}

fn dict_file(source: SourceTag) -> String {
    format!("dict_{source}.ssrd")
}

fn svm_file(view: View) -> String {
    let name = match view {
        View::Combined => "combined",
        View::GlobalOnly => "global",
        View::LocalOnly => "local",
    };
    format!("svm_{name}.ssrm")
}

impl TrainedModel {
    pub fn fingerprint(&self) -> Fingerprint {
        self.config.fingerprint()
    }

    pub fn svm(&self, view: View) -> &LinearSvmModel {
        &self.svms[View::ALL.iter().position(|&v| v == view).expect("view listed")]
    }

    pub fn represent(&self, f: &ImageFeatures) -> Result<SceneRepresentation> {
        let coding = self.config.coding_config();
        let mode = self.config.pooling.mode;
        let scale_ids: Vec<u32> = self.config.scale_config().scale_ids().collect();
        if f.local.len() != self.pca.len() || f.local.iter().any(|s| s.len() != scale_ids.len()) {
            return Err(Error::InvalidArgument("descriptor bundle does not match the model's scales".into()));
        }
        let mut pooled = Vec::with_capacity(self.pca.len() * scale_ids.len());
        for (s, &source) in SourceTag::LOCAL.iter().enumerate() {
            for (k, &scale_id) in scale_ids.iter().enumerate() {
                let mut r = self.pca[s].transform_rows(&f.local[s][k])?;
                normalize_rows(&mut r);
                let codes = code_matrix(&self.dictionaries[s], &r, &coding)?;
                pooled.push(pool_scale(&codes, mode, scale_id, source)?);
            }
        }
        assemble_with_layout(&f.global, &pooled, &self.layout)
    }

    pub fn represent_all(&self, feats: &[ImageFeatures]) -> Result<Vec<SceneRepresentation>> {
        feats
            .par_iter()
            .enumerate()
            .map(|(i, f)| self.represent(f).map_err(|e| e.at_sample(i)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("representation"))
    }

    pub fn evaluate_view(&self, view: View, reps: &[SceneRepresentation], labels: &[usize]) -> Result<Evaluation> {
        let rows: Vec<Vec<f64>> = reps.iter().map(|r| view.project(r)).collect();
        let data = LabeledSet::from_rows(&rows, labels.to_vec(), self.classes.len())?;
        classifier::evaluate(self.svm(view), &data)
    }

    /// Writes every artifact, each binary one tagged with the configuration
    /// fingerprint.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
        let fp = self.fingerprint();
        let mut files = Vec::new();
        for (s, &source) in SourceTag::LOCAL.iter().enumerate() {
            let name = pca_file(source);
            self.pca[s].save(&dir.join(&name), &fp)?;
            files.push(name);
            let name = dict_file(source);
            self.dictionaries[s].save(&dir.join(&name), &fp)?;
            files.push(name);
        }
        for view in View::ALL {
            let name = svm_file(view);
            self.svm(view).save(&dir.join(&name), &fp)?;
            files.push(name);
        }
        self.layout.save(&dir.join(LAYOUT_FILE))?;
        write_atomic(&dir.join(CONFIG_FILE), self.config.to_toml().as_bytes())?;
        let index = ArtifactIndex {
            fingerprint: fingerprint_hex(&fp),
            classes: self.classes.clone(),
            representation_dim: self.layout.total_len(),
            files,
        };
        write_atomic(&dir.join(ARTIFACTS_FILE), toml::to_string(&index).expect("index serializes").as_bytes())
    }

    /// Loads artifacts trained under `cfg`; any artifact carrying another
    /// fingerprint is rejected.
    pub fn load(dir: &Path, cfg: &PipelineConfig) -> Result<Self> {
        let expected = cfg.fingerprint();
        let check = |found: Fingerprint, path: &Path| {
            if found == expected {
                Ok(())
            } else {
                Err(Error::FingerprintMismatch {
                    expected: fingerprint_hex(&expected),
                    found: fingerprint_hex(&found),
                }
                .at_path(path))
            }
        };
        let index_path = dir.join(ARTIFACTS_FILE);
        let text = fs::read_to_string(&index_path).map_err(|e| Error::from(e).at_path(&index_path))?;
        let index: ArtifactIndex = toml::from_str(&text).map_err(|e| Error::Malformed(e.to_string()).at_path(&index_path))?;
        let mut pca = Vec::new();
        let mut dictionaries = Vec::new();
        for source in SourceTag::LOCAL {
            let path = dir.join(pca_file(source));
            let (p, fp) = PcaModel::load(&path)?;
            check(fp, &path)?;
            pca.push(p);
            let path = dir.join(dict_file(source));
            let (d, fp) = Dictionary::load(&path)?;
            check(fp, &path)?;
            dictionaries.push(d);
        }
        let mut svms = Vec::new();
        for view in View::ALL {
            let path = dir.join(svm_file(view));
            let (m, fp) = LinearSvmModel::load(&path)?;
            check(fp, &path)?;
            svms.push(m);
        }
        let layout = Layout::load(&dir.join(LAYOUT_FILE))?;
        if layout.total_len() != svms[0].dim() || svms.iter().any(|m| m.classes() != index.classes.len()) {
            return Err(Error::Malformed("artifacts disagree on dimensions or classes".into()).at_path(dir));
        }
        Ok(TrainedModel {
            config: cfg.clone(),
            classes: index.classes,
            pca,
            dictionaries,
            layout,
            svms,
        })
    }
}

pub fn log_to_jsonl(log: &[LogEntry]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
        .collect()
}
