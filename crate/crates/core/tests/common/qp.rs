//! Dense reference solver for the one-class dual, independent of SMO.
//!
//! Accelerated projected gradient (FISTA with adaptive restart) over the
//! capped simplex `{0 <= a <= c, sum a = 1}`. The projection finds the shift
//! `tau` with `sum clip(v - tau, 0, c) = 1` by bisection.

pub struct QpSolution {
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
}

pub fn rbf(gamma: f64, x: &[f64], y: &[f64]) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-gamma * d2).exp()
}

fn project(v: &[f64], cap: f64) -> Vec<f64> {
    let mass = |tau: f64| -> f64 { v.iter().map(|x| (x - tau).clamp(0.0, cap)).sum() };
    let mut lo = v.iter().copied().fold(f64::INFINITY, f64::min) - cap - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).clamp(0.0, cap)).collect()
}

fn objective(q: &[Vec<f64>], a: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            s += a[i] * a[j] * q[i][j];
        }
    }
    0.5 * s
}

pub fn solve(data: &[Vec<f64>], nu: f64, gamma: f64) -> QpSolution {
    let n = data.len();
    let q: Vec<Vec<f64>> = data
        .iter()
        .map(|x| data.iter().map(|y| rbf(gamma, x, y)).collect())
        .collect();
    let cap = 1.0 / (nu * n as f64);
    // trace bounds the largest eigenvalue of a PSD matrix
    let lipschitz = n as f64;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| (0..n).map(|j| q[i][j] * a[j]).sum())
            .collect()
    };

    let mut x = project(&vec![1.0 / n as f64; n], cap);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(&q, &x);
    for _ in 0..200_000 {
        let g = grad(&y);
        let step: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b / lipschitz).collect();
        let x_next = project(&step, cap);
        let f_next = objective(&q, &x_next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f_next > f_prev {
            // restart momentum
            y = x.clone();
            t = 1.0;
            continue;
        }
        let moved: f64 = x_next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        y = x_next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        x = x_next;
        t = t_next;
        f_prev = f_next;
        if moved < 1e-14 {
            break;
        }
    }

    let g = grad(&x);
    let delta = 1e-7;
    let free: Vec<f64> = (0..n)
        .filter(|&i| x[i] > delta && x[i] < cap - delta)
        .map(|i| g[i])
        .collect();
    let rho = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else {
        let lower = (0..n)
            .filter(|&i| x[i] >= cap - delta)
            .map(|i| g[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let upper = (0..n)
            .filter(|&i| x[i] <= delta)
            .map(|i| g[i])
            .fold(f64::INFINITY, f64::min);
        match (lower.is_finite(), upper.is_finite()) {
            (true, true) => 0.5 * (lower + upper),
            (true, false) => lower,
            _ => upper,
        }
    };
    QpSolution {
        objective: objective(&q, &x),
        alphas: x,
        rho,
    }
}

pub fn decision(data: &[Vec<f64>], sol: &QpSolution, gamma: f64, x: &[f64]) -> f64 {
    data.iter()
        .zip(&sol.alphas)
        .map(|(xi, a)| a * rbf(gamma, xi, x))
        .sum::<f64>()
        - sol.rho
}
