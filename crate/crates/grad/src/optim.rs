use crate::error::{shape_err, GradError, Result};
use crate::exec::Gradients;
use crate::params::ParamStore;
use crate::tensor::Element;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One decoupled-weight-decay Adam step over every parameter that has a
/// gradient. Parameters without one are left untouched.
pub fn adamw_update<T: Element>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| GradError::MissingParam(name.to_string()))?;
        if p.shape() != g.shape() {
            return Err(shape_err(0, "adamw", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (name, g) in grads.iter() {
        let p = params.get_mut(name).expect("checked above");
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gi = gi.as_f64();
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let mut x = w.as_f64();
            x -= c.lr * c.weight_decay * x;
            x -= c.lr * mhat / (vhat.sqrt() + c.eps);
            *w = T::of(x);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{evaluate, gradients, Graph, Tensor};

    fn grads_for(store: &ParamStore<f32>, scale: f64) -> Gradients<f32> {
        let mut g = Graph::new();
        let w = g.input("w", store.shape("w").unwrap());
        let s = g.scale(w, scale);
        let loss = g.sum(s);
        let v = evaluate(&g, store).unwrap();
        gradients(&g, &v, loss).unwrap()
    }

    #[test]
    fn defaults_follow_recipe() {
        let c = AdamWConfig::default();
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.weight_decay, 1e-6);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        let before = store.clone();
        let grads = grads_for(&store, 0.0);
        let mut st = OptimizerState::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..5 {
            adamw_update(&mut store, &grads, &mut st).unwrap();
        }
        assert_eq!(store, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap());
        let before = store.clone();
        let grads = grads_for(&store, 3.0);
        let mut st = OptimizerState::new(AdamWConfig {
            lr: 0.0,
            ..Default::default()
        });
        adamw_update(&mut store, &grads, &mut st).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn single_scalar_step_matches_hand_calculation() {
        // w = 0.8, g = 0.3, lr = 0.01, wd = 0.1, beta = (0.9, 0.999), eps = 1e-8.
        // m = 0.03, v = 0.00009; mhat = 0.3, vhat = 0.09, sqrt = 0.3.
        // decay: 0.8 - 0.01*0.1*0.8 = 0.7992; step: 0.3 / (0.3 + 1e-8) * 0.01.
        let expected = 0.7992 - 0.01 * (0.3 / (0.3 + 1e-8));
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(vec![1], vec![0.8]).unwrap());
        let mut g = Graph::<f64>::new();
        let w = g.input("w", &[1]);
        let s = g.scale(w, 0.3);
        let loss = g.sum(s);
        let v = evaluate(&g, &store).unwrap();
        let grads = gradients(&g, &v, loss).unwrap();
        let mut st = OptimizerState::new(AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        });
        adamw_update(&mut store, &grads, &mut st).unwrap();
        let got = store.get("w").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-7, "{got} vs {expected}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(&[1, 2]));
        let mut other = ParamStore::<f32>::new();
        other.insert("w", Tensor::zeros(&[2, 2]));
        let grads = grads_for(&other, 1.0);
        let mut st = OptimizerState::default();
        assert!(adamw_update(&mut store, &grads, &mut st).is_err());
        assert_eq!(st.step, 0);
    }
}
