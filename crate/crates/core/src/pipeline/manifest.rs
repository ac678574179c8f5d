use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::features::RawImage;
use crate::rng::seeded;
use crate::synth::SynthSample;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestSample {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub label: usize,
}

/// Labeled image lists for both splits. Classes keep the order of their
/// first appearance in the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub train: Vec<ManifestSample>,
    pub test: Vec<ManifestSample>,
}

impl DatasetManifest {
    /// `manifest` holds `class<TAB>relative_path` lines, `split` holds
    /// `relative_path<TAB>train|test` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(root: &Path, manifest: &str, split: &str) -> Result<Self> {
        let mut splits = std::collections::HashMap::new();
        for (n, line) in content_lines(split) {
            let (path, which) = line
                .split_once('\t')
                .ok_or_else(|| Error::Malformed(format!("split line {n}: expected path<TAB>split")))?;
            let which = match which.trim() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::Malformed(format!("split line {n}: unknown split {other:?}"))),
            };
            if splits.insert(path.to_string(), which).is_some_and(|prev| prev != which) {
                return Err(Error::Malformed(format!("{path} is listed in both splits")));
            }
        }
        let mut out = DatasetManifest {
            root: root.to_path_buf(),
            classes: Vec::new(),
            train: Vec::new(),
            test: Vec::new(),
        };
        let mut seen = HashSet::new();
        for (n, line) in content_lines(manifest) {
            let (class, path) = line
                .split_once('\t')
                .ok_or_else(|| Error::Malformed(format!("manifest line {n}: expected class<TAB>path")))?;
            if !seen.insert(path.to_string()) {
                return Err(Error::Malformed(format!("manifest line {n}: duplicate path {path}")));
            }
            let label = match out.classes.iter().position(|c| c == class) {
                Some(l) => l,
                None => {
                    out.classes.push(class.to_string());
                    out.classes.len() - 1
                }
            };
            let sample = ManifestSample {
                path: PathBuf::from(path),
                label,
            };
            match splits.get(path) {
                Some(Split::Train) => out.train.push(sample),
                Some(Split::Test) => out.test.push(sample),
                None => return Err(Error::Malformed(format!("{path} has no split assignment"))),
            }
        }
        Ok(out)
    }

    /// Reads `manifest_path` and the split file next to it (or `split_path`).
    pub fn load(manifest_path: &Path, split_path: Option<&Path>) -> Result<Self> {
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let split_path = split_path.map_or_else(|| root.join(SPLIT_FILE), Path::to_path_buf);
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::from(e).at_path(p));
        Self::parse(&root, &read(manifest_path)?, &read(&split_path)?).map_err(|e| e.at_path(manifest_path))
    }

    pub fn to_texts(&self) -> (String, String) {
        let mut manifest = String::new();
        let mut split = String::new();
        for (which, samples) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for s in samples {
                let p = s.path.to_string_lossy();
                manifest.push_str(&format!("{}\t{p}\n", self.classes[s.label]));
                split.push_str(&format!("{p}\t{}\n", which.name()));
            }
        }
        (manifest, split)
    }

    /// Writes `manifest.tsv` and `split.tsv` into the root directory.
    pub fn save(&self) -> Result<PathBuf> {
        let (manifest, split) = self.to_texts();
        let path = self.root.join(MANIFEST_FILE);
        write_atomic(&path, manifest.as_bytes())?;
        write_atomic(&self.root.join(SPLIT_FILE), split.as_bytes())?;
        Ok(path)
    }

    /// Builds a manifest from a directory-per-class tree. When `root` has
    /// `train/` and `test/` subdirectories those define the split; otherwise
    /// each class is shuffled with `seed` and `test_fraction` of it (rounded
    /// down) goes to the test split.
    pub fn import_dir(root: &Path, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let mut out = DatasetManifest {
            root: root.to_path_buf(),
            classes: Vec::new(),
            train: Vec::new(),
            test: Vec::new(),
        };
        let (train_dir, test_dir) = (root.join("train"), root.join("test"));
        if train_dir.is_dir() && test_dir.is_dir() {
            out.classes = subdirs(&train_dir)?;
            for (which, dir) in [(Split::Train, &train_dir), (Split::Test, &test_dir)] {
                for (label, class) in out.classes.iter().enumerate() {
                    for file in images_in(&dir.join(class))? {
                        let path = Path::new(which.name()).join(class).join(file);
                        let sample = ManifestSample { path, label };
                        match which {
                            Split::Train => out.train.push(sample),
                            Split::Test => out.test.push(sample),
                        }
                    }
                }
            }
        } else {
            out.classes = subdirs(root)?;
            for (label, class) in out.classes.iter().enumerate() {
                let mut files = images_in(&root.join(class))?;
                files.shuffle(&mut seeded(crate::rng::mix_seed(seed, label as u64)));
                let n_test = (files.len() as f64 * test_fraction).floor() as usize;
                for (i, file) in files.into_iter().enumerate() {
                    let sample = ManifestSample {
                        path: Path::new(class).join(file),
                        label,
                    };
                    if i < n_test {
                        out.test.push(sample);
                    } else {
                        out.train.push(sample);
                    }
                }
            }
        }
        if out.classes.is_empty() {
            return Err(Error::InvalidArgument(format!("no class directories under {}", root.display())));
        }
        Ok(out)
    }

    pub fn split(&self, which: Split) -> ManifestSplit<'_> {
        ManifestSplit {
            root: &self.root,
            samples: match which {
                Split::Train => &self.train,
                Split::Test => &self.test,
            },
        }
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).at_path(dir))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn images_in(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::from(e).at_path(dir))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let ext = Path::new(&name)
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

/// Labeled images that can be loaded one at a time.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;

    fn label(&self, index: usize) -> usize;

    fn load(&self, index: usize) -> Result<RawImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

pub struct ManifestSplit<'a> {
    root: &'a Path,
    samples: &'a [ManifestSample],
}

impl ImageSource for ManifestSplit<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn label(&self, index: usize) -> usize {
        self.samples[index].label
    }

    fn load(&self, index: usize) -> Result<RawImage> {
        RawImage::load(&self.root.join(&self.samples[index].path))
    }
}

impl ImageSource for Vec<SynthSample> {
    fn len(&self) -> usize {
        <[SynthSample]>::len(self)
    }

    fn label(&self, index: usize) -> usize {
        self[index].label
    }

    fn load(&self, index: usize) -> Result<RawImage> {
        Ok(self[index].image.clone())
    }
}

/// Writes a synthetic dataset as a directory-per-class tree of PNGs with
/// `train/` and `test/` roots, plus its manifest.
pub fn write_synth_dataset(ds: &crate::synth::SynthDataset, root: &Path) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        classes: ds.classes.clone(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (which, samples) in [(Split::Train, &ds.train), (Split::Test, &ds.test)] {
        for (i, s) in samples.iter().enumerate() {
            let rel = Path::new(which.name())
                .join(&ds.classes[s.label])
                .join(format!("{i:05}.png"));
            let full = root.join(&rel);
            if let Some(parent) = full.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::from(e).at_path(parent))?;
            }
            s.image.save_png(&full)?;
            let sample = ManifestSample {
                path: rel,
                label: s.label,
            };
            match which {
                Split::Train => manifest.train.push(sample),
                Split::Test => manifest.test.push(sample),
            }
        }
    }
    manifest.save()?;
    Ok(manifest)
}
