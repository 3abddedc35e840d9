use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: store.iter().map(|(_, p)| Tensor::zeros(p.value().shape())).collect(),
            v: store.iter().map(|(_, p)| Tensor::zeros(p.value().shape())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> &Tensor<T> {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &Tensor<T> {
        &self.v[id.index()]
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    ///
    /// Fails without touching any parameter if a gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if !self.config.lr.is_finite() || self.config.lr <= 0.0 {
            return Err(Error::validation(format!("learning rate must be positive, got {}", self.config.lr)));
        }
        for (_, p) in store.iter() {
            if !p.grad().all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{}`", p.name())));
            }
        }
        self.t += 1;
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let one = T::one();
        let c1 = one - b1.powi(self.t as i32);
        let c2 = one - b2.powi(self.t as i32);
        let lr = T::of(self.config.lr);
        let eps = T::of(self.config.eps);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let grad = store.grad(id).clone();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let value = store.value_mut(id).data_mut();
            for (((theta, &g), mi), vi) in value.iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(value: f64, grad: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value)).unwrap();
        s.grad_mut(id).data_mut()[0] = grad;
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = store(1.0, 0.3);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        let delta = 1.0 - s.value(id).item();
        // lr * |g| / (|g| + eps)
        let expected = 0.001 * 0.3 / (0.3 + 1e-8);
        assert!((delta - expected).abs() < 1e-15, "{delta}");
        assert_eq!(adam.step_count(), 1);
        assert!(adam.second_moment(id).data()[0] >= 0.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = store(0.25, 0.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(id).item(), 0.25);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let (mut s, id) = store(0.5, -0.7);
            let mut adam = AdamState::new(&s, AdamConfig::default());
            adam.step(&mut s).unwrap();
            adam.step(&mut s).unwrap();
            s.value(id).item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = store(0.5, f64::NAN);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        let err = adam.step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.value(id).item(), 0.5);
        assert_eq!(adam.step_count(), 0);
    }
}
