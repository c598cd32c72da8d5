//! Conditioning of latent vectors before the one-class SVM: min-max scaling to
//! `[-1, 1]` followed by PCA. Fitting and applying always happen in that order.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_RETAINED_VARIANCE: f64 = 0.95;

fn check_rows(data: &[Vec<f64>]) -> Result<usize> {
    let d = data
        .first()
        .ok_or_else(|| Error::Data("cannot fit on an empty set".into()))?
        .len();
    for (i, row) in data.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Data(format!(
                "row {i} has {} features, expected {d}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {i} has non-finite features")));
        }
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizerModel {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizerModel {
    pub fn fit(data: &[Vec<f64>]) -> Result<Self> {
        let d = check_rows(data)?;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in data {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(NormalizerModel { min, max })
    }

    pub fn features(&self) -> usize {
        self.min.len()
    }

    /// True for features that were constant on the fitting set.
    pub fn is_degenerate(&self, j: usize) -> bool {
        self.max[j] == self.min[j]
    }

    /// Maps into `[-1, 1]`, clamping values outside the fitted range.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.features() {
            return Err(Error::dim("feature length", self.features(), x.len()));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.is_degenerate(j) {
                    0.0
                } else {
                    let s = 2.0 * (v - self.min[j]) / (self.max[j] - self.min[j]) - 1.0;
                    s.clamp(-1.0, 1.0)
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` unit-length rows.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Fraction of total variance covered by the kept components.
    pub retained: f64,
}

/// Sample covariance (denominator `n - 1`) and column means.
pub fn covariance(data: &[Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = check_rows(data)?;
    let n = data.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

impl PcaModel {
    pub fn fit(data: &[Vec<f64>], retained_variance: f64) -> Result<Self> {
        if !(retained_variance > 0.0 && retained_variance <= 1.0) {
            return Err(Error::Config(format!(
                "retained variance must be in (0, 1], got {retained_variance}"
            )));
        }
        let (mean, cov) = covariance(data)?;
        let d = mean.len();
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        // round-off can leave tiny negative eigenvalues
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = values.iter().sum();

        let k = if total > 0.0 {
            let target = retained_variance * total;
            let mut cum = 0.0;
            let mut k = d;
            for (i, v) in values.iter().enumerate() {
                cum += v;
                if cum >= target * (1.0 - 1e-12) {
                    k = i + 1;
                    break;
                }
            }
            k
        } else {
            1
        };

        let components = order[..k]
            .iter()
            .map(|&i| {
                let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                // fix the sign so the largest-magnitude entry is positive
                let pivot =
                    c.iter()
                        .copied()
                        .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
                if pivot < 0.0 {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
                c
            })
            .collect();
        let explained_variance = values[..k].to_vec();
        let retained = if total > 0.0 {
            explained_variance.iter().sum::<f64>() / total
        } else {
            1.0
        };
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            retained,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("feature length", self.input_dim(), x.len()));
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((c, v), m)| c * (v - m))
                    .sum()
            })
            .collect())
    }

    /// Maps a reduced vector back to the input space.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim() {
            return Err(Error::dim("reduced length", self.output_dim(), y.len()));
        }
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(y) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Keeps only the first `k` components.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.output_dim() {
            return Err(Error::Argument(format!(
                "cannot keep {k} of {} components",
                self.output_dim()
            )));
        }
        let kept: f64 = self.explained_variance[..k].iter().sum();
        let all: f64 = self.explained_variance.iter().sum();
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            explained_variance: self.explained_variance[..k].to_vec(),
            retained: if all > 0.0 {
                self.retained * kept / all
            } else {
                self.retained
            },
        })
    }
}

/// Normalizer and PCA fitted together, applied in the fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPrep {
    pub normalizer: NormalizerModel,
    pub pca: PcaModel,
}

impl LatentPrep {
    pub fn fit(data: &[Vec<f64>], retained_variance: f64) -> Result<Self> {
        let normalizer = NormalizerModel::fit(data)?;
        let scaled: Vec<Vec<f64>> = data
            .iter()
            .map(|x| normalizer.apply(x))
            .collect::<Result<_>>()?;
        let pca = PcaModel::fit(&scaled, retained_variance)?;
        Ok(LatentPrep { normalizer, pca })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.pca.apply(&self.normalizer.apply(x)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.normalizer.features() != self.pca.input_dim() {
            return Err(Error::Config(format!(
                "normalizer has {} features but PCA expects {}",
                self.normalizer.features(),
                self.pca.input_dim()
            )));
        }
        Ok(())
    }
}
