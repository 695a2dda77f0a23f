//! Adam with global-norm gradient clipping.

use crate::nn::params::ParameterStore;
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip: Option<f64>,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParameterStore<T>, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Clips the accumulated gradients in place, then applies one bias
    /// corrected Adam update. Returns the pre-clip global norm.
    pub fn step(&mut self, store: &mut ParameterStore<T>) -> f64 {
        let norm = store.grad_norm();
        if let Some(clip) = self.clip {
            if norm > clip {
                let s = T::of(clip / norm);
                for id in store.ids().collect::<Vec<_>>() {
                    for g in store.grad_mut(id).data_mut() {
                        *g *= s;
                    }
                }
            }
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let one = T::one();
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = store.value_mut(id).data_mut();
            for j in 0..w.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::new(&[values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0]);
        let mut adam = AdamState::new(&s, 1e-2);
        adam.step(&mut s);
        assert_eq!(s.get("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn clips_global_norm_to_one() {
        let mut s = store(&[0.0, 0.0]);
        s.grad_mut(s.id("w").unwrap())
            .data_mut()
            .copy_from_slice(&[3.0, 4.0]);
        let mut adam = AdamState::new(&s, 1e-3);
        let norm = adam.step(&mut s);
        assert_eq!(norm, 5.0);
        let g = s.grad(s.id("w").unwrap()).data();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        // first moment after one step is (1 - beta1) * clipped gradient
        assert!((adam.m[0].data()[0] - 0.1 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = store(&[0.0]);
        let id = s.id("w").unwrap();
        let mut adam = AdamState::new(&s, 1e-2);
        let mut reached = None;
        for it in 0..2000 {
            let w = s.value(id).data()[0];
            s.zero_grad();
            s.grad_mut(id).data_mut()[0] = 2.0 * (w - 2.0);
            adam.step(&mut s);
            if reached.is_none() && (s.value(id).data()[0] - 2.0).abs() < 1e-2 {
                reached = Some(it);
            }
        }
        assert!(reached.is_some(), "w = {}", s.value(id).data()[0]);
        assert!((s.value(id).data()[0] - 2.0).abs() < 1e-2);
    }
}
