use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{ImageSource, Split};
use crate::binio::{round_f32, write_atomic};
use crate::error::{Error, Result};
use crate::features::{read_feature_file, write_feature_file, BuiltinExtractor, FeatureExtractor, RawImage, SourceTag};
use crate::patch_grid::ScaleConfig;
use crate::perturb::{apply, PerturbationSpec};

/// Descriptors of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub global: Vec<f64>,
    /// `local[source][scale]` holds one descriptor per row, sources in
    /// [`SourceTag::LOCAL`] order and scales in configuration order.
    pub local: Vec<Vec<DMatrix<f64>>>,
}

impl ImageFeatures {
    pub fn patch_counts(&self) -> Vec<usize> {
        self.local[0].iter().map(|m| m.nrows()).collect()
    }
}

/// Global and local extractors together with the patch grid.
#[derive(Clone)]
pub struct Extractors {
    pub global: Arc<dyn FeatureExtractor>,
    /// In [`SourceTag::LOCAL`] order.
    pub local: Vec<Arc<dyn FeatureExtractor>>,
    pub scales: ScaleConfig,
}

impl Extractors {
    pub fn builtin(cfg: &PipelineConfig) -> Result<Self> {
        let f = &cfg.features;
        Ok(Extractors {
            global: Arc::new(BuiltinExtractor::new(f.global.into())?),
            local: vec![
                Arc::new(BuiltinExtractor::new(f.structure.into())?),
                Arc::new(BuiltinExtractor::new(f.object.into())?),
            ],
            scales: cfg.scale_config(),
        })
    }

    /// Descriptors are rounded to float32 precision so they equal their
    /// cached copies.
    pub fn extract(&self, img: &RawImage) -> Result<ImageFeatures> {
        let dims = img.dims();
        let mut global = self.global.extract_values(img, &crate::patch_grid::PatchRect::full(dims))?;
        global.iter_mut().for_each(|v| *v = round_f32(*v));
        let patches = self.scales.patches(dims)?;
        let mut local = Vec::with_capacity(self.local.len());
        for ex in &self.local {
            let mut per_scale = Vec::with_capacity(self.scales.divisors.len());
            for scale_id in self.scales.scale_ids() {
                let rects: Vec<_> = patches.iter().filter(|p| p.scale_id == scale_id).collect();
                let mut m = DMatrix::zeros(rects.len(), ex.dim());
                for (i, r) in rects.iter().enumerate() {
                    let v: Vec<f64> = ex.extract_values(img, r)?.into_iter().map(round_f32).collect();
                    m.row_mut(i).copy_from_slice(&v);
                }
                per_scale.push(m);
            }
            local.push(per_scale);
        }
        Ok(ImageFeatures { global, local })
    }

    /// Extracts every image of `src`, optionally perturbing image `i` with
    /// `spec.for_image(i)` first.
    pub fn extract_all(&self, src: &dyn ImageSource, perturb: Option<&PerturbationSpec>) -> Result<Vec<ImageFeatures>> {
        (0..src.len())
            .into_par_iter()
            .map(|i| {
                let run = || {
                    let img = src.load(i)?;
                    let img = match perturb {
                        Some(spec) => apply(&img, &spec.for_image(i))?.image,
                        None => img,
                    };
                    self.extract(&img)
                };
                run().map_err(|e| e.at_sample(i))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DatasetHeader {
    classes: Vec<String>,
    patches_per_scale: Vec<usize>,
}

pub const DATASET_FILE: &str = "dataset.toml";

/// Precomputed descriptors of both splits.
///
/// On disk: `dataset.toml` (`classes`, `patches_per_scale`), and per split
/// `{split}_labels.txt` (one class index per line) and
/// `{split}_{global,structure,object}.ssrf`. Local files stack each image's
/// patches, scale by scale, so image `i` owns rows `i*P .. (i+1)*P` with `P`
/// the sum of `patches_per_scale`. An optional `{split}_patches.txt` gives
/// per-image counts (space separated) when they vary between images.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub classes: Vec<String>,
    pub train: FeatureSplit,
    pub test: FeatureSplit,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSplit {
    pub features: Vec<ImageFeatures>,
    pub labels: Vec<usize>,
}

impl FeatureDataset {
    pub fn split(&self, which: Split) -> &FeatureSplit {
        match which {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&header_path).map_err(|e| Error::from(e).at_path(&header_path))?;
        let header: DatasetHeader = toml::from_str(&text).map_err(|e| Error::Malformed(e.to_string()).at_path(&header_path))?;
        if header.patches_per_scale.is_empty() || header.classes.is_empty() {
            return Err(Error::Malformed("dataset needs classes and patch counts".into()).at_path(&header_path));
        }
        let load = |which| FeatureSplit::load(dir, which, &header);
        Ok(FeatureDataset {
            classes: header.classes.clone(),
            train: load(Split::Train)?,
            test: load(Split::Test)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
        let counts = self
            .train
            .features
            .iter()
            .chain(&self.test.features)
            .next()
            .map(ImageFeatures::patch_counts)
            .ok_or_else(|| Error::InvalidArgument("cannot save an empty feature dataset".into()))?;
        let header = DatasetHeader {
            classes: self.classes.clone(),
            patches_per_scale: counts,
        };
        write_atomic(&dir.join(DATASET_FILE), toml::to_string(&header).expect("header serializes").as_bytes())?;
        self.train.save(dir, Split::Train, &header)?;
        self.test.save(dir, Split::Test, &header)
    }
}

fn split_file(dir: &Path, which: Split, what: &str) -> std::path::PathBuf {
    dir.join(format!("{}_{what}", which.name()))
}

impl FeatureSplit {
    fn load(dir: &Path, which: Split, header: &DatasetHeader) -> Result<Self> {
        let labels_path = split_file(dir, which, "labels.txt");
        let text = fs::read_to_string(&labels_path).map_err(|e| Error::from(e).at_path(&labels_path))?;
        let labels = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v < header.classes.len())
                    .ok_or_else(|| Error::Malformed(format!("bad label {l:?}")).at_path(&labels_path))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = labels.len();
        let counts_path = split_file(dir, which, "patches.txt");
        let counts: Vec<Vec<usize>> = if counts_path.exists() {
            let text = fs::read_to_string(&counts_path).map_err(|e| Error::from(e).at_path(&counts_path))?;
            let rows = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.split_whitespace()
                        .map(|v| v.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .ok()
                        .filter(|r| r.len() == header.patches_per_scale.len())
                        .ok_or_else(|| Error::Malformed(format!("bad patch counts {l:?}")).at_path(&counts_path))
                })
                .collect::<Result<Vec<_>>>()?;
            if rows.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "patch count lines",
                    expected: n,
                    found: rows.len(),
                }
                .at_path(&counts_path));
            }
            rows
        } else {
            vec![header.patches_per_scale.clone(); n]
        };

        let global_path = split_file(dir, which, "global.ssrf");
        let global = read_feature_file(&global_path)?;
        if global.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "global feature rows",
                expected: n,
                found: global.nrows(),
            }
            .at_path(&global_path));
        }
        let mut features: Vec<ImageFeatures> = global
            .row_iter()
            .map(|r| ImageFeatures {
                global: r.iter().copied().collect(),
                local: Vec::with_capacity(2),
            })
            .collect();
        for source in SourceTag::LOCAL {
            let path = split_file(dir, which, &format!("{}.ssrf", source.name()));
            let m = read_feature_file(&path)?;
            let total: usize = counts.iter().flatten().sum();
            if m.nrows() != total {
                return Err(Error::DimensionMismatch {
                    context: "local feature rows",
                    expected: total,
                    found: m.nrows(),
                }
                .at_path(&path));
            }
            let mut row = 0;
            for (f, c) in features.iter_mut().zip(&counts) {
                let per_scale = c
                    .iter()
                    .map(|&k| {
                        let block = m.rows(row, k).into_owned();
                        row += k;
                        block
                    })
                    .collect();
                f.local.push(per_scale);
            }
        }
        Ok(FeatureSplit { features, labels })
    }

    fn save(&self, dir: &Path, which: Split, header: &DatasetHeader) -> Result<()> {
        let labels: String = self.labels.iter().map(|l| format!("{l}\n")).collect();
        write_atomic(&split_file(dir, which, "labels.txt"), labels.as_bytes())?;
        let counts: Vec<Vec<usize>> = self.features.iter().map(ImageFeatures::patch_counts).collect();
        if counts.iter().any(|c| *c != header.patches_per_scale) {
            let text: String = counts
                .iter()
                .map(|c| c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n")
                .collect();
            write_atomic(&split_file(dir, which, "patches.txt"), text.as_bytes())?;
        }
        let gdim = self.features.first().map_or(0, |f| f.global.len());
        let global = DMatrix::from_fn(self.features.len(), gdim, |i, j| self.features[i].global[j]);
        write_feature_file(&split_file(dir, which, "global.ssrf"), &global)?;
        for (s, source) in SourceTag::LOCAL.iter().enumerate() {
            let blocks: Vec<&DMatrix<f64>> = self.features.iter().flat_map(|f| f.local[s].iter()).collect();
            let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
            let cols = blocks.first().map_or(0, |b| b.ncols());
            let mut m = DMatrix::zeros(rows, cols);
            let mut r = 0;
            for b in blocks {
                m.rows_mut(r, b.nrows()).copy_from(b);
                r += b.nrows();
            }
            write_feature_file(&split_file(dir, which, &format!("{}.ssrf", source.name())), &m)?;
        }
        Ok(())
    }
}
