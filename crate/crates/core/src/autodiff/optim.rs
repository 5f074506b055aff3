use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Adam with bias correction. Moment buffers are created lazily (zeros) the
/// first time a parameter is stepped.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, t: 0, moments: Vec::new() }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// First and second moment of a parameter, if it has been stepped.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments
            .get(id.0)
            .and_then(Option::as_ref)
            .map(|m| (m.first.as_slice(), m.second.as_slice()))
    }

    /// Updates `ids` in place from their accumulated gradients. Gradients are
    /// left untouched.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for &id in ids {
            if self.moments.len() <= id.0 {
                self.moments.resize(id.0 + 1, None);
            }
            let param = store.get_mut(id);
            let n = param.grad.len();
            let m = self.moments[id.0].get_or_insert_with(|| Moments { first: vec![0.0; n], second: vec![0.0; n] });
            let grad = &param.grad;
            let values = param.value.data_mut();
            for i in 0..n {
                let g = grad[i];
                m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g;
                m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g * g;
                let m_hat = m.first[i] / bc1;
                let v_hat = m.second[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![value]));
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut store, id) = single(0.7);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        adam.step(&mut store, &[id]);
        assert_eq!(store.value(id).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = single(0.0);
        store.get_mut(id).grad[0] = 1.0;
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        adam.step(&mut store, &[id]);
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.value(id).item() - expected).abs() < 1e-15);
        assert_eq!(store.grad(id), &[1.0]);
    }

    #[test]
    fn second_step_uses_t_equal_two() {
        let (mut store, id) = single(0.0);
        store.get_mut(id).grad[0] = 1.0;
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut adam = Adam::new(cfg);
        adam.step(&mut store, &[id]);
        adam.step(&mut store, &[id]);
        assert_eq!(adam.steps(), 2);
        // m = 0.1*0.9 + 0.1 = 0.19, bc1 = 0.19; v = 0.001*0.999 + 0.001, bc2 = 1 - 0.999^2
        let (m, v) = adam.moments(id).unwrap();
        assert!((m[0] - 0.19).abs() < 1e-15);
        assert!((v[0] - 0.001999).abs() < 1e-15);
        let step2 = 0.1 * (0.19 / 0.19) / ((0.001999f64 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        let expected = -0.1 / (1.0 + 1e-8) - step2;
        assert!((store.value(id).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn only_listed_params_move() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0]));
        let b = store.add("b", Tensor::vector(vec![1.0]));
        store.get_mut(a).grad[0] = 1.0;
        store.get_mut(b).grad[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store, &[a]);
        assert!(store.value(a).item() < 1.0);
        assert_eq!(store.value(b).item(), 1.0);
    }
}
