//! Adam with bias correction.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    m: IndexMap<String, Tensor<f32>>,
    v: IndexMap<String, Tensor<f32>>,
    t: u64,
}

impl OptimState {
    /// Fresh zeroed state shaped like `params`.
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = |p: &ParamStore<f32>| {
            p.iter()
                .map(|(name, t)| {
                    (name.to_string(), Tensor::zeros(t.dims()).expect("valid dims"))
                })
                .collect::<IndexMap<_, _>>()
        };
        OptimState { m: zeros(params), v: zeros(params), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.m.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn second_moments(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.v.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Rebuilds state from checkpoint tensors.
    pub fn from_parts(
        t: u64,
        m: IndexMap<String, Tensor<f32>>,
        v: IndexMap<String, Tensor<f32>>,
    ) -> Result<Self> {
        if m.len() != v.len() || m.keys().zip(v.keys()).any(|(a, b)| a != b) {
            return Err(Error::Checkpoint(
                "optimizer moment tensors disagree on parameter names".into(),
            ));
        }
        for (name, mt) in &m {
            let vt = &v[name];
            if mt.dims() != vt.dims() {
                return Err(Error::Checkpoint(format!(
                    "optimizer moments for {name:?} have mismatched dims"
                )));
            }
            if vt.data().iter().any(|&x| x < 0.0) {
                return Err(Error::Checkpoint(format!(
                    "second moment for {name:?} has negative entries"
                )));
            }
        }
        Ok(OptimState { m, v, t })
    }
}

/// One Adam update:
/// m ← β1·m + (1−β1)·g, v ← β2·v + (1−β2)·g²,
/// θ ← θ − lr·m̂/(√v̂ + eps) with m̂ = m/(1−β1^t), v̂ = v/(1−β2^t).
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &IndexMap<String, Tensor<f32>>,
    state: &mut OptimState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Config(format!(
            "gradient map has {} entries, store has {}",
            grads.len(),
            params.len()
        )));
    }
    for name in grads.keys() {
        if params.get(name).is_none() {
            return Err(Error::Config(format!("gradient for unknown parameter {name:?}")));
        }
    }

    state.t += 1;
    let t = state.t;
    let b1 = beta1 as f32;
    let b2 = beta2 as f32;
    let m_corr = (1.0 / (1.0 - beta1.powf(t as f64))) as f32;
    let v_corr = (1.0 / (1.0 - beta2.powf(t as f64))) as f32;
    let lr = lr as f32;
    let eps = eps as f32;

    for (name, g) in grads {
        let theta = params.get_mut(name).expect("checked above");
        if theta.dims() != g.dims() {
            return Err(Error::Shape(format!(
                "gradient for {name:?} has dims {:?}, parameter has {:?}",
                g.dims(),
                theta.dims()
            )));
        }
        let m = state.m.get_mut(name).expect("state mirrors store");
        let v = state.v.get_mut(name).expect("state mirrors store");
        let td = theta.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..td.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let m_hat = md[i] * m_corr;
            let v_hat = vd[i] * v_corr;
            td[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig, ParamStore};

    fn scalar_store(value: f32) -> ParamStore<f32> {
        ParamStore::from_tensors(0, [("theta".to_string(), Tensor::scalar(value))]).unwrap()
    }

    fn grad_map(value: f32) -> IndexMap<String, Tensor<f32>> {
        [("theta".to_string(), Tensor::scalar(value))].into_iter().collect()
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // θ=0, g=0.5, lr=1e-4: bias-corrected m̂/√v̂ is exactly sign(g),
        // so θ moves to ≈ −1e-4
        let mut params = scalar_store(0.0);
        let mut state = OptimState::new(&params);
        adam_step(&mut params, &grad_map(0.5), &mut state, 1e-4, 0.9, 0.999, 1e-8).unwrap();
        let theta = params.get("theta").unwrap().data()[0] as f64;
        assert!(
            (theta + 1e-4).abs() < 1e-9,
            "theta {theta} should be about -1e-4"
        );
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_with_zero_state_leaves_params() {
        let mut params = scalar_store(1.25);
        let mut state = OptimState::new(&params);
        adam_step(&mut params, &grad_map(0.0), &mut state, 1e-2, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(params.get("theta").unwrap().data()[0], 1.25);
    }

    #[test]
    fn identical_runs_produce_identical_state() {
        let cfg = ModelConfig {
            groups: 1,
            blocks_per_group: 1,
            channels: 8,
            reduction: 2,
            pa_kernel: 3,
            use_fa: true,
            use_lrl: true,
            use_ffa: true,
        };
        let run = || {
            let mut params = init_params::<f32>(&cfg, 3).unwrap();
            let mut state = OptimState::new(&params);
            let grads: IndexMap<String, Tensor<f32>> = params
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::full(t.dims(), 0.01).unwrap()))
                .collect();
            for _ in 0..5 {
                adam_step(&mut params, &grads, &mut state, 1e-3, 0.9, 0.999, 1e-8).unwrap();
            }
            (params, state)
        };
        let (p1, s1) = run();
        let (p2, s2) = run();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn key_mismatch_rejected() {
        let mut params = scalar_store(0.0);
        let mut state = OptimState::new(&params);
        let wrong: IndexMap<String, Tensor<f32>> =
            [("other".to_string(), Tensor::scalar(1.0))].into_iter().collect();
        assert!(
            adam_step(&mut params, &wrong, &mut state, 1e-3, 0.9, 0.999, 1e-8).is_err()
        );
    }
}
