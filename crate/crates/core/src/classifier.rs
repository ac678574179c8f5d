//! One-vs-rest linear SVM.
//!
//! Each binary problem minimizes
//! `0.5 * |w|^2 + (C / n) * sum_i max(0, 1 - y_i (w . x_i + b))`
//! by dual coordinate descent with the bias folded in as a constant feature.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_atomic, Fingerprint, Reader, Writer};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, seeded};

const MAGIC: &[u8; 4] = b"SSRM";
const VERSION: u32 = 1;

/// Samples as rows of `x`, labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    x: DMatrix<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledSet {
    pub fn new(x: DMatrix<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "labels",
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        if classes == 0 {
            return Err(Error::InvalidArgument("class count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{classes}")));
        }
        if let Some(i) = x.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("features of sample {i}")));
        }
        Ok(LabeledSet { x, labels, classes })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, classes: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "sample",
                expected: dim,
                found: r.len(),
            });
        }
        let x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(x, labels, classes)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the projected-gradient spread of an epoch falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            max_epochs: 1000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Config(format!("svm C must be positive, got {}", self.c)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("svm max_epochs must be positive".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Config(format!("svm tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Per-epoch solver trace of one binary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTrace {
    pub dual: Vec<f64>,
    pub primal: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

impl BinaryTrace {
    pub fn final_gap(&self) -> f64 {
        match (self.primal.last(), self.dual.last()) {
            (Some(p), Some(d)) => p - d,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    /// One row per class.
    weights: DMatrix<f64>,
    biases: Vec<f64>,
    c: f64,
}

impl LinearSvmModel {
    pub fn new(weights: DMatrix<f64>, biases: Vec<f64>, c: f64) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::DimensionMismatch {
                context: "svm biases",
                expected: weights.nrows(),
                found: biases.len(),
            });
        }
        if weights.nrows() < 2 {
            return Err(Error::InvalidArgument("a model needs at least two classes".into()));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::NonFinite("svm parameters".into()));
        }
        Ok(LinearSvmModel { weights, biases, c })
    }

    pub fn classes(&self) -> usize {
        self.biases.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn scores(&self, rep: &[f64]) -> Result<Vec<f64>> {
        if rep.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "representation",
                expected: self.dim(),
                found: rep.len(),
            });
        }
        Ok((0..self.classes())
            .map(|c| {
                let w = self.weights.row(c);
                w.iter().zip(rep).map(|(a, b)| a * b).sum::<f64>() + self.biases[c]
            })
            .collect())
    }

    /// Highest-scoring class, lowest index on ties, with all class scores.
    pub fn predict(&self, rep: &[f64]) -> Result<(usize, Vec<f64>)> {
        let scores = self.scores(rep)?;
        Ok((argmax(&scores), scores))
    }

    pub fn rounded(&self) -> Self {
        let r = |v: f64| crate::binio::round_f32(v);
        LinearSvmModel {
            weights: self.weights.map(r),
            biases: self.biases.iter().map(|&v| r(v)).collect(),
            c: self.c,
        }
    }

    pub fn to_bytes(&self, fingerprint: &Fingerprint) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.bytes(fingerprint);
        w.u32(self.classes() as u32);
        w.u64(self.dim() as u64);
        w.f64(self.c);
        w.f32s(self.weights.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
        w.f32s(self.biases.iter().copied());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Fingerprint)> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let fp = r.fingerprint()?;
        let classes = r.u32()? as usize;
        let dim = r.usize("svm dimension")?;
        let c = r.f64()?;
        let count = classes
            .checked_mul(dim)
            .ok_or_else(|| Error::Malformed(format!("svm shape {classes}x{dim} overflows")))?;
        let weights = r.f32s(count, "svm weights")?;
        let biases = r.f32s(classes, "svm biases")?;
        r.expect_end()?;
        let model = Self::new(DMatrix::from_row_slice(classes, dim, &weights), biases, c)?;
        Ok((model, fp))
    }

    pub fn save(&self, path: &Path, fingerprint: &Fingerprint) -> Result<()> {
        write_atomic(path, &self.to_bytes(fingerprint))
    }

    pub fn load(path: &Path) -> Result<(Self, Fingerprint)> {
        Self::from_bytes(&read_file(path)?).map_err(|e| e.at_path(path))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// Trains one binary problem with targets `y` in {-1, +1}. Returns the
/// weights, the bias and the solver trace.
pub fn train_binary(x: &DMatrix<f64>, y: &[f64], cfg: &SvmConfig, seed: u64) -> Result<(Vec<f64>, f64, BinaryTrace)> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if n == 0 || y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "binary targets",
            expected: n,
            found: y.len(),
        });
    }
    let upper = cfg.c / n as f64;
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let q: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded(seed);
    let mut trace = BinaryTrace {
        dual: Vec::new(),
        primal: Vec::new(),
        epochs: 0,
        converged: false,
    };

    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let xi = &rows[i];
            let margin = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let g = y[i] * margin - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, upper);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(xi) {
                        *wj += step * xj;
                    }
                    b += step;
                }
            }
        }
        trace.epochs += 1;
        let wnorm2 = w.iter().map(|v| v * v).sum::<f64>() + b * b;
        trace.dual.push(alpha.iter().sum::<f64>() - 0.5 * wnorm2);
        let hinge: f64 = rows
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let m = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                (1.0 - yi * m).max(0.0)
            })
            .sum();
        trace.primal.push(0.5 * wnorm2 + upper * hinge);
        if pg_max - pg_min < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numerical("svm weights diverged".into()));
    }
    Ok((w, b, trace))
}

/// Trains one binary problem per class; the per-class shuffle seed is derived
/// from `cfg.seed` and the class index.
pub fn train(data: &LabeledSet, cfg: &SvmConfig) -> Result<(LinearSvmModel, Vec<BinaryTrace>)> {
    cfg.validate()?;
    let counts = data.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::SingleClass);
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(missing));
    }
    let results: Vec<_> = (0..data.classes)
        .into_par_iter()
        .map(|c| {
            let y: Vec<f64> = data.labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            train_binary(&data.x, &y, cfg, mix_seed(cfg.seed, c as u64))
        })
        .collect();
    let mut weights = DMatrix::zeros(data.classes, data.dim());
    let mut biases = Vec::with_capacity(data.classes);
    let mut traces = Vec::with_capacity(data.classes);
    for (c, r) in results.into_iter().enumerate() {
        let (w, b, t) = r?;
        if !t.converged {
            tracing::warn!(class = c, epochs = t.epochs, gap = t.final_gap(), "svm did not reach tolerance");
        }
        weights.row_mut(c).copy_from_slice(&w);
        biases.push(b);
        traces.push(t);
    }
    Ok((LinearSvmModel::new(weights, biases, cfg.c)?, traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

pub fn evaluate(model: &LinearSvmModel, data: &LabeledSet) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    if data.classes > model.classes() {
        return Err(Error::InvalidArgument(format!(
            "data has {} classes, model {}",
            data.classes,
            model.classes()
        )));
    }
    let predictions = data
        .x
        .row_iter()
        .enumerate()
        .map(|(i, r)| {
            let rep: Vec<f64> = r.iter().copied().collect();
            model.predict(&rep).map(|(c, _)| c).map_err(|e| e.at_sample(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = model.classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in data.labels.iter().zip(&predictions) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Ok(Evaluation {
        overall: correct as f64 / data.len() as f64,
        per_class,
        confusion,
        predictions,
    })
}
