//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients whose global L2 norm exceeds this are rescaled to it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

/// Rescales `grads` in place so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    /// Clips, then applies one bias-corrected Adam update at learning rate `lr`.
    /// Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut Grads, lr: f64) -> f64 {
        let norm = match self.config.clip_norm {
            Some(c) => clip_global_norm(grads, c),
            None => grads.global_norm(),
        };
        self.step += 1;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.epsilon);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let i = id.index();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_does_not_move() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[1.0, -2.0]));
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let mut grads = Grads::new(1);
        grads.accumulate(id, &Tensor::row_vector(&[0.0, 0.0]));
        adam.step(&mut store, &mut grads, 1e-3);
        assert_eq!(store.get(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn clipping_rescales_to_unit_norm() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[0.0, 0.0]));
        let mut grads = Grads::new(1);
        grads.accumulate(id, &Tensor::row_vector(&[6.0, 8.0]));
        let before = clip_global_norm(&mut grads, 1.0);
        assert_eq!(before, 10.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
        let _ = store;
    }

    #[test]
    fn one_step_on_quadratic_reduces_loss() {
        // f(w) = (w - 3)^2, gradient 2(w - 3)
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let loss = |w: f64| (w - 3.0).powi(2);
        let w0 = store.get(id).item();
        let mut grads = Grads::new(1);
        grads.accumulate(id, &Tensor::scalar(2.0 * (w0 - 3.0)));
        adam.step(&mut store, &mut grads, 0.1);
        let w1 = store.get(id).item();
        // first Adam step moves by exactly lr in the descent direction
        assert!((w1 - 0.1).abs() < 1e-9);
        assert!(loss(w1) < loss(w0));
    }
}
