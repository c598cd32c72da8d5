//! One-class SVM with an RBF kernel.
//!
//! The dual problem
//!
//! ```text
//! minimize    0.5 * sum_ij a_i a_j k(x_i, x_j)
//! subject to  0 <= a_i <= 1 / (nu * n),   sum_i a_i = 1
//! ```
//!
//! is solved by sequential minimal optimization: each step moves mass between
//! two multipliers, which keeps the equality constraint satisfied exactly. The
//! pair is chosen with second-order working-set selection. The decision
//! function is `f(x) = sum_i a_i k(x_i, x) - rho` and `f(x) >= 0` means the
//! point is recognized.

use crate::error::{Error, Result};

/// Below this curvature a working pair is treated as degenerate.
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfKernel {
    pub gamma: f64,
}

impl RbfKernel {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(RbfKernel { gamma })
    }

    /// `exp(-gamma * ||x - y||^2)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::dim("feature length", x.len(), y.len()));
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-self.gamma * d2).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcsvmTrainConfig {
    pub nu: f64,
    pub gamma: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tolerance: f64,
    /// Iteration budget in units of `n` pair updates.
    pub max_passes: usize,
}

impl Default for OcsvmTrainConfig {
    fn default() -> Self {
        OcsvmTrainConfig {
            nu: 0.5,
            gamma: 0.5,
            tolerance: 1e-5,
            max_passes: 10_000,
        }
    }
}

impl OcsvmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::Config(format!(
                "nu must be in (0, 1], got {}",
                self.nu
            )));
        }
        RbfKernel::new(self.gamma)?;
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be positive".into()));
        }
        Ok(())
    }
}

/// Full dual solution over all training points.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcsvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// Offset `rho` subtracted in the decision function.
    pub bias: f64,
    pub kernel: RbfKernel,
    pub nu: f64,
    pub n_train: usize,
    /// False when the solver hit its iteration budget first.
    pub converged: bool,
}

fn validate_data(data: &[Vec<f64>]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::Data("one-class SVM needs at least one sample".into()))?;
    let d = first.len();
    if d == 0 {
        return Err(Error::Data("feature vectors are empty".into()));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Data(format!(
                "sample {i} has {} features, expected {d}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("sample {i} has non-finite features")));
        }
    }
    Ok(d)
}

fn gram(data: &[Vec<f64>], kernel: &RbfKernel) -> Vec<f64> {
    let n = data.len();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
        for j in 0..i {
            let v = kernel.eval_unchecked(&data[i], &data[j]);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    q
}

/// Solves the one-class dual and returns every multiplier.
pub fn solve_dual(data: &[Vec<f64>], config: &OcsvmTrainConfig) -> Result<DualSolution> {
    config.validate()?;
    validate_data(data)?;
    let kernel = RbfKernel::new(config.gamma)?;
    let n = data.len();
    let q = gram(data, &kernel);
    let upper = 1.0 / (config.nu * n as f64);

    // Feasible start: fill multipliers up to the box bound until the mass is 1.
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0f64;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = upper.min(remaining);
        remaining -= *a;
    }

    let mut grad = vec![0.0; n];
    for (i, g) in grad.iter_mut().enumerate() {
        *g = (0..n).map(|j| q[i * n + j] * alpha[j]).sum();
    }

    let max_iter = config.max_passes.saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i: may increase, smallest gradient
        let mut i = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            if alpha[t] < upper && grad[t] < g_min {
                g_min = grad[t];
                i = t;
            }
        }
        // maximal violation among those that may decrease
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
            }
        }
        if i == usize::MAX || g_max - g_min < config.tolerance {
            converged = true;
            break;
        }
        // j: second-order choice maximizing the guaranteed decrease
        let mut j = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 && grad[t] > g_min {
                let b = grad[t] - g_min;
                let a = (q[i * n + i] + q[t * n + t] - 2.0 * q[i * n + t]).max(TAU);
                let gain = b * b / a;
                if gain > best {
                    best = gain;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }
        let a = (q[i * n + i] + q[j * n + j] - 2.0 * q[i * n + j]).max(TAU);
        let step = ((grad[j] - grad[i]) / a)
            .min(upper - alpha[i])
            .min(alpha[j]);
        if step <= 0.0 {
            converged = true;
            break;
        }
        let new_i = alpha[i] + step;
        let new_j = alpha[j] - step;
        // snap to the bounds to keep the box exact
        let (new_i, new_j) = (
            if upper - new_i < 1e-15 { upper } else { new_i },
            if new_j < 1e-15 { 0.0 } else { new_j },
        );
        let di = new_i - alpha[i];
        let dj = new_j - alpha[j];
        alpha[i] = new_i;
        alpha[j] = new_j;
        for t in 0..n {
            grad[t] += q[t * n + i] * di + q[t * n + j] * dj;
        }
        iterations += 1;
    }

    let rho = offset(&alpha, &grad, upper);
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    Ok(DualSolution {
        alphas: alpha,
        rho,
        objective,
        iterations,
        converged,
    })
}

/// Offset from the KKT conditions: the decision function vanishes on free
/// support vectors; without any, take the middle of the feasible interval.
fn offset(alpha: &[f64], grad: &[f64], upper: f64) -> f64 {
    let eps = 1e-12;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut lower_bound = f64::NEG_INFINITY;
    let mut upper_bound = f64::INFINITY;
    for (&a, &g) in alpha.iter().zip(grad) {
        if a >= upper - eps {
            lower_bound = lower_bound.max(g);
        } else if a <= eps {
            upper_bound = upper_bound.min(g);
        } else {
            free_sum += g;
            free_count += 1;
        }
    }
    if free_count > 0 {
        free_sum / free_count as f64
    } else if lower_bound.is_finite() && upper_bound.is_finite() {
        0.5 * (lower_bound + upper_bound)
    } else if lower_bound.is_finite() {
        lower_bound
    } else {
        upper_bound
    }
}

/// Fits the one-class boundary on pre-normalized feature vectors.
pub fn fit(data: &[Vec<f64>], config: &OcsvmTrainConfig) -> Result<OcsvmModel> {
    let sol = solve_dual(data, config)?;
    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for (x, &a) in data.iter().zip(&sol.alphas) {
        if a > 0.0 {
            support_vectors.push(x.clone());
            alphas.push(a);
        }
    }
    Ok(OcsvmModel {
        support_vectors,
        alphas,
        bias: sol.rho,
        kernel: RbfKernel::new(config.gamma)?,
        nu: config.nu,
        n_train: data.len(),
        converged: sol.converged,
    })
}

impl OcsvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// Signed distance-like score; non-negative means recognized.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim("feature length", self.dim(), x.len()));
        }
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, &a)| a * self.kernel.eval_unchecked(sv, x))
            .sum();
        Ok(s - self.bias)
    }

    /// `+1` recognized (benign), `-1` novel. A zero decision value is `+1`.
    pub fn predict(&self, x: &[f64]) -> Result<i8> {
        Ok(if self.decision_value(x)? >= 0.0 {
            1
        } else {
            -1
        })
    }
}
