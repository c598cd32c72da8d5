use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let first: Vec<Vec<T>> = params
            .iter()
            .map(|(_, t)| vec![T::zero(); t.len()])
            .collect();
        let second = first.clone();
        AdamState {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update. Gradients are validated before any parameter
/// is touched, so a failed step leaves `params` and `state` unchanged.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    params.check_layout(grads)?;
    if state.first.len() != params.len() {
        return Err(Error::State(
            "optimizer state does not match parameters".into(),
        ));
    }
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {name}"
            )));
        }
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let lr = T::lit(cfg.lr);
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let eps = T::lit(cfg.eps);
    let one = T::one();
    let c1 = one - T::lit(cfg.beta1.powi(t));
    let c2 = one - T::lit(cfg.beta2.powi(t));

    for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (((w, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![v])).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_store(0.7);
        let g = scalar_store(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.7]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(0.0);
        let g = scalar_store(1.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        let w = p.get("w").unwrap().data()[0];
        assert!((w + 1e-3).abs() < 1e-10, "{w}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_store(0.0);
        let g = scalar_store(f64::NAN);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let err = adam_step(&mut p, &g, &mut s).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(s.step(), 0);
        assert_eq!(p.get("w").unwrap().data(), &[0.0]);
    }
}
