use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::FeatureVector;
use crate::binio::{self, round_f32, Fingerprint, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSRP";
const VERSION: u32 = 1;

/// Eigenvalues below this fraction of the largest one count as zero when
/// determining the rank of the sample covariance.
const RANK_TOL: f64 = 1e-10;

/// Mean-centered projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// `input_dim x output_dim`, orthonormal columns in descending variance order.
    basis: DMatrix<f64>,
    /// Sample variance (n - 1 denominator) along each basis column.
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    /// Fits `p` components to the rows of `x`.
    pub fn fit(x: &DMatrix<f64>, p: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("PCA needs at least 2 samples, got {n}")));
        }
        if p == 0 || p > (n - 1).min(d) {
            return Err(Error::InvalidArgument(format!(
                "PCA output dimension {p} outside 1..={} for {n} samples of dimension {d}",
                (n - 1).min(d)
            )));
        }
        let (mean, eig) = decompose(x)?;
        let rank = rank_of(&eig);
        if p > rank {
            return Err(Error::RankDeficient { requested: p, rank });
        }
        Ok(Self::from_eigen(mean, &eig, p))
    }

    /// Fits `min(max_p, n - 1, d, rank)` components.
    pub fn fit_up_to(x: &DMatrix<f64>, max_p: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("PCA needs at least 2 samples, got {n}")));
        }
        let (mean, eig) = decompose(x)?;
        let p = max_p.min(n - 1).min(d).min(rank_of(&eig));
        if p == 0 {
            return Err(Error::RankDeficient { requested: max_p, rank: 0 });
        }
        Ok(Self::from_eigen(mean, &eig, p))
    }

    fn from_eigen(mean: DVector<f64>, eig: &SymmetricEigen<f64, nalgebra::Dyn>, p: usize) -> Self {
        let d = mean.len();
        let order = descending_order(&eig.eigenvalues);
        let mut basis = DMatrix::zeros(d, p);
        let mut eigenvalues = Vec::with_capacity(p);
        for (out, &src) in order.iter().take(p).enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            canonicalize_sign(&mut col);
            basis.set_column(out, &col);
            eigenvalues.push(eig.eigenvalues[src].max(0.0));
        }
        let total_variance = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        PcaModel {
            mean,
            basis,
            eigenvalues,
            total_variance,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues.iter().map(|v| v / self.total_variance).collect()
    }

    pub fn transform_values(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "PCA input",
                expected: self.input_dim(),
                found: y.len(),
            });
        }
        let centered = DVector::from_iterator(y.len(), y.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(self.basis.tr_mul(&centered).iter().copied().collect())
    }

    pub fn transform(&self, y: &FeatureVector) -> Result<FeatureVector> {
        let values = self.transform_values(&y.values)?;
        FeatureVector::new(values, y.source, y.scale_id, y.patch_index)
    }

    /// Projects every row of `x`.
    pub fn transform_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "PCA input",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * &self.basis)
    }

    /// Copy with every parameter rounded to float32 precision.
    pub fn rounded(&self) -> Self {
        PcaModel {
            mean: self.mean.map(round_f32),
            basis: self.basis.map(round_f32),
            eigenvalues: self.eigenvalues.iter().map(|&v| round_f32(v)).collect(),
            total_variance: self.total_variance,
        }
    }

    /// `"SSRP"`, version, 16-byte fingerprint, input dim `u64`, output dim
    /// `u64`, total variance `f64`, then float32 mean, eigenvalues and the
    /// column-major basis.
    pub fn to_bytes(&self, fingerprint: &Fingerprint) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.bytes(fingerprint);
        w.u64(self.input_dim() as u64);
        w.u64(self.output_dim() as u64);
        w.f64(self.total_variance);
        w.f32s(self.mean.iter().copied());
        w.f32s(self.eigenvalues.iter().copied());
        w.f32s(self.basis.iter().copied());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Fingerprint)> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let fp = r.fingerprint()?;
        let d = r.usize("input dim")?;
        let p = r.usize("output dim")?;
        if p > d {
            return Err(Error::Malformed(format!("PCA output dim {p} exceeds input dim {d}")));
        }
        let total_variance = r.f64()?;
        let mean = DVector::from_vec(r.f32s(d, "PCA mean")?);
        let eigenvalues = r.f32s(p, "PCA eigenvalues")?;
        let basis = DMatrix::from_vec(d, p, r.f32s(d * p, "PCA basis")?);
        r.expect_end()?;
        Ok((
            PcaModel {
                mean,
                basis,
                eigenvalues,
                total_variance,
            },
            fp,
        ))
    }

    pub fn save(&self, path: &Path, fingerprint: &Fingerprint) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes(fingerprint)).map_err(|e| e.at_path(path))
    }

    pub fn load(path: &Path) -> Result<(Self, Fingerprint)> {
        Self::from_bytes(&binio::read_file(path)?).map_err(|e| e.at_path(path))
    }
}

fn decompose(x: &DMatrix<f64>) -> Result<(DVector<f64>, SymmetricEigen<f64, nalgebra::Dyn>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let n = x.nrows();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    Ok((mean, SymmetricEigen::new(cov)))
}

fn rank_of(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> usize {
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|&&v| v > RANK_TOL * max).count()
}

/// Indices sorted by descending eigenvalue; equal values keep index order.
fn descending_order(values: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Flips `col` so its largest-magnitude entry (first on ties) is positive.
fn canonicalize_sign(col: &mut DVector<f64>) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Cyclic Jacobi eigenvalue iteration, used as an oracle independent of
    /// the library eigensolver.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    fn anisotropic(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = [3.0, 1.0, 0.1];
        DMatrix::from_fn(n, 3, |_, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd[j]
        })
    }

    #[test]
    fn line_in_3d() {
        let dir = [2.0, -6.0, 3.0].map(|v| v / 7.0);
        let x = DMatrix::from_fn(10, 3, |i, j| 0.5 + (i as f64 - 4.0) * dir[j]);
        let m = PcaModel::fit(&x, 1).unwrap();
        let b = m.basis().column(0);
        // The largest-magnitude entry (-6/7) is made positive.
        let expected = [-2.0 / 7.0, 6.0 / 7.0, -3.0 / 7.0];
        for (a, e) in b.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{b}");
        }
        assert!(matches!(
            PcaModel::fit(&x, 2),
            Err(Error::RankDeficient { requested: 2, rank: 1 })
        ));
    }

    #[test]
    fn full_basis_reconstructs() {
        let x = anisotropic(50, 1);
        let m = PcaModel::fit(&x, 3).unwrap();
        let proj = m.transform_rows(&x).unwrap();
        let recon = proj * m.basis().transpose();
        for i in 0..50 {
            for j in 0..3 {
                assert!((recon[(i, j)] + m.mean()[j] - x[(i, j)]).abs() < 1e-6);
            }
        }
        let gram = m.basis().tr_mul(m.basis());
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-6);
    }

    #[test]
    fn explained_variance_matches_oracle() {
        let x = anisotropic(4000, 7);
        let m = PcaModel::fit(&x, 2).unwrap();
        let ratio = m.explained_variance_ratio();
        assert!((ratio[0] - 0.9).abs() < 0.02, "{ratio:?}");
        assert!((ratio[1] - 0.1).abs() < 0.02, "{ratio:?}");

        // Independent route: Jacobi on the sample covariance built by hand.
        let n = x.nrows() as f64;
        let mean: Vec<f64> = (0..3).map(|j| x.column(j).sum() / n).collect();
        let cov: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                (0..3)
                    .map(|b| {
                        (0..x.nrows())
                            .map(|i| (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]))
                            .sum::<f64>()
                            / (n - 1.0)
                    })
                    .collect()
            })
            .collect();
        let oracle = jacobi_eigenvalues(cov);
        let total: f64 = oracle.iter().sum();
        for k in 0..2 {
            assert!((m.eigenvalues()[k] - oracle[k]).abs() < 1e-9 * oracle[0]);
            assert!((ratio[k] - oracle[k] / total).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_special_points() {
        let x = anisotropic(200, 3);
        let m = PcaModel::fit(&x, 2).unwrap();
        let mean: Vec<f64> = m.mean().iter().copied().collect();
        assert!(m.transform_values(&mean).unwrap().iter().all(|v| v.abs() < 1e-12));
        for j in 0..2 {
            let y: Vec<f64> = (0..3).map(|i| mean[i] + m.basis()[(i, j)]).collect();
            let t = m.transform_values(&y).unwrap();
            for (k, v) in t.iter().enumerate() {
                let e = if k == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-9);
            }
        }
        assert!(matches!(
            m.transform_values(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transform_matches_naive_dot_products() {
        let x = anisotropic(100, 11);
        let m = PcaModel::fit(&x, 2).unwrap();
        let y = [0.3, -1.2, 0.05];
        let got = m.transform_values(&y).unwrap();
        for j in 0..2 {
            let mut dot = 0.0;
            for i in 0..3 {
                dot += (y[i] - m.mean()[i]) * m.basis()[(i, j)];
            }
            assert!((got[j] - dot).abs() < 1e-12);
        }
    }

    #[test]
    fn projected_variance_equals_eigenvalue() {
        let x = anisotropic(300, 5);
        let m = PcaModel::fit(&x, 3).unwrap();
        let proj = m.transform_rows(&x).unwrap();
        for j in 0..3 {
            let col = proj.column(j);
            let mu = col.mean();
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 299.0;
            assert!((var - m.eigenvalues()[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_component_counts() {
        let x = anisotropic(3, 0);
        assert!(PcaModel::fit(&x, 0).is_err());
        assert!(PcaModel::fit(&x, 3).is_err());
        assert!(PcaModel::fit(&DMatrix::zeros(1, 3), 1).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let m = PcaModel::fit(&anisotropic(40, 2), 2).unwrap().rounded();
        let fp = [7u8; 16];
        let bytes = m.to_bytes(&fp);
        let (back, fp2) = PcaModel::from_bytes(&bytes).unwrap();
        assert_eq!(fp2, fp);
        assert_eq!(back.to_bytes(&fp), bytes);
        assert_eq!(back.basis(), m.basis());
    }
}
