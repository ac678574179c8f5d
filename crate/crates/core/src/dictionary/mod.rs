//! Over-complete dictionaries: per-scale k-means initialization and
//! alternating-minimization refinement.

mod kmeans;
mod learn;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::binio::{self, round_f32, Fingerprint, Reader, Writer};
use crate::error::{Error, Result};
use crate::features::SourceTag;

pub use kmeans::{kmeans, KmeansConfig, KmeansResult};
pub use learn::{build_initial_dictionary, learn, objective, replace_dead_atoms, DictLearnConfig, Learned};

/// Atoms must have unit L2 norm within this tolerance.
pub const NORM_TOL: f64 = 1e-6;

const MAGIC: &[u8; 4] = b"SSRD";
const VERSION: u32 = 1;

/// Contiguous range of dictionary columns learned from one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleBlock {
    pub scale_id: u32,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// `d x columns`, unit-norm columns.
    atoms: DMatrix<f64>,
    blocks: Vec<ScaleBlock>,
    source: SourceTag,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>, blocks: Vec<ScaleBlock>, source: SourceTag) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::InvalidArgument("dictionary must be non-empty".into()));
        }
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.len == 0 {
                return Err(Error::InvalidArgument(format!(
                    "scale blocks must partition the columns; block {b:?} starts at {}",
                    b.start
                )));
            }
            next += b.len;
        }
        if next != atoms.ncols() {
            return Err(Error::DimensionMismatch {
                context: "dictionary block table",
                expected: atoms.ncols(),
                found: next,
            });
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary atoms".into()));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            let n = col.norm();
            if (n - 1.0).abs() > NORM_TOL {
                return Err(Error::InvalidArgument(format!("atom {j} has norm {n}, expected 1")));
            }
        }
        Ok(Dictionary { atoms, blocks, source })
    }

    /// Normalizes every column first; zero columns are rejected.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>, blocks: Vec<ScaleBlock>, source: SourceTag) -> Result<Self> {
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::InvalidArgument(format!("atom {j} cannot be normalized (norm {n})")));
            }
            col /= n;
        }
        Self::new(atoms, blocks, source)
    }

    /// Dictionary with all columns in one block of scale 1.
    pub fn single_block(atoms: DMatrix<f64>, source: SourceTag) -> Result<Self> {
        let len = atoms.ncols();
        Self::from_unnormalized(atoms, vec![ScaleBlock { scale_id: 1, start: 0, len }], source)
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn columns(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn blocks(&self) -> &[ScaleBlock] {
        &self.blocks
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.atoms.tr_mul(&self.atoms)
    }

    pub(crate) fn with_atoms(&self, atoms: DMatrix<f64>) -> Result<Self> {
        Self::new(atoms, self.blocks.clone(), self.source)
    }

    /// Copy with atoms rounded to float32 and re-normalized in float32, so
    /// the result is exactly what the container persists.
    pub fn rounded(&self) -> Self {
        let mut atoms = self.atoms.clone();
        for mut col in atoms.column_iter_mut() {
            let n = col.norm();
            col.iter_mut().for_each(|v| *v = round_f32(*v / n));
        }
        Dictionary {
            atoms,
            blocks: self.blocks.clone(),
            source: self.source,
        }
    }

    /// `"SSRD"`, version, 16-byte fingerprint, d `u64`, columns `u64`,
    /// source tag `u32`, block count `u32`, blocks as (scale id `u32`, start
    /// `u64`, length `u64`), then float32 atoms in column-major order.
    pub fn to_bytes(&self, fingerprint: &Fingerprint) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.bytes(fingerprint);
        w.u64(self.dim() as u64);
        w.u64(self.columns() as u64);
        w.u32(self.source.code());
        w.u32(self.blocks.len() as u32);
        for b in &self.blocks {
            w.u32(b.scale_id);
            w.u64(b.start as u64);
            w.u64(b.len as u64);
        }
        w.f32s(self.atoms.iter().copied());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Fingerprint)> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let fp = r.fingerprint()?;
        let d = r.usize("atom dimension")?;
        let cols = r.usize("column count")?;
        let source = SourceTag::from_code(r.u32()?)?;
        let nblocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(nblocks.min(1024));
        for _ in 0..nblocks {
            blocks.push(ScaleBlock {
                scale_id: r.u32()?,
                start: r.usize("block start")?,
                len: r.usize("block length")?,
            });
        }
        let count = d
            .checked_mul(cols)
            .ok_or_else(|| Error::Malformed(format!("{d}x{cols} dictionary overflows")))?;
        let values = r.f32s(count, "dictionary atoms")?;
        r.expect_end()?;
        let dict = Dictionary::new(DMatrix::from_vec(d, cols, values), blocks, source)?;
        Ok((dict, fp))
    }

    pub fn save(&self, path: &Path, fingerprint: &Fingerprint) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes(fingerprint)).map_err(|e| e.at_path(path))
    }

    pub fn load(path: &Path) -> Result<(Self, Fingerprint)> {
        Self::from_bytes(&binio::read_file(path)?).map_err(|e| e.at_path(path))
    }
}

/// Dictionary sizes used for the public benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryPreset {
    Scene15,
    Mit67,
    Sun397,
}

impl DictionaryPreset {
    pub const ALL: [DictionaryPreset; 3] = [DictionaryPreset::Scene15, DictionaryPreset::Mit67, DictionaryPreset::Sun397];

    /// Total words per source dictionary.
    pub fn words(self) -> usize {
        match self {
            DictionaryPreset::Scene15 => 2175,
            DictionaryPreset::Mit67 => 3886,
            DictionaryPreset::Sun397 => 6907,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DictionaryPreset::Scene15 => "scene15",
            DictionaryPreset::Mit67 => "mit67",
            DictionaryPreset::Sun397 => "sun397",
        }
    }
}

/// Splits `total` words across scales proportionally to `weights`
/// (largest-remainder rounding, earlier scales win ties). Every scale gets
/// at least one word when `total >= weights.len()`.
pub fn split_words(total: usize, weights: &[usize]) -> Result<Vec<usize>> {
    let sum: usize = weights.iter().sum();
    if weights.is_empty() || sum == 0 || weights.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid word split weights {weights:?}")));
    }
    if total < weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{total} words cannot cover {} scales",
            weights.len()
        )));
    }
    let mut out: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut rema: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, &w)| (total * w % sum, i)).collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - out.iter().sum::<usize>();
    for &(_, i) in &rema {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    // Guarantee a non-empty block per scale by borrowing from the largest.
    while let Some(z) = out.iter().position(|&v| v == 0) {
        let big = (0..out.len()).max_by_key(|&i| (out[i], usize::MAX - i)).unwrap();
        out[big] -= 1;
        out[z] += 1;
    }
    Ok(out)
}
