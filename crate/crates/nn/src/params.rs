use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// RMSProp running mean of squared gradients.
    pub mean_square: Tensor<T>,
}

/// Named parameters with matching gradient accumulators and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

/// RMSProp hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self { lr, decay: 0.9, eps: 1e-8 }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param { name: name.clone(), grad: zeros.clone(), mean_square: zeros, value });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<T>) -> Result<()> {
        self.params[id.0].grad.add_assign(grad)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// One RMSProp update of every parameter, then zero the gradients:
    /// `v ← ρ·v + (1−ρ)·g²`, `p ← p − lr·g/√(v + ε)`.
    pub fn rmsprop_step(&mut self, opt: &RmsProp) {
        let lr = T::of_f64(opt.lr);
        let decay = T::of_f64(opt.decay);
        let keep = T::of_f64(1.0 - opt.decay);
        let eps = T::of_f64(opt.eps);
        for p in &mut self.params {
            let values = p.value.data_mut();
            let ms = p.mean_square.data_mut();
            for ((v, m), g) in values.iter_mut().zip(ms.iter_mut()).zip(p.grad.data_mut()) {
                *m = decay * *m + keep * *g * *g;
                *v -= lr * *g / (*m + eps).sqrt();
                *g = T::zero();
            }
        }
    }

    /// Clamp every parameter value into `[-c, c]`.
    pub fn clip(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0) {
            return Err(NnError::Config(format!("clip bound must be positive, got {c}")));
        }
        let hi = T::of_f64(c);
        let lo = -hi;
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = v.max(lo).min(hi);
            }
        }
        Ok(())
    }

    pub fn max_abs_value(&self) -> f64 {
        self.params.iter().map(|p| p.value.max_abs().as_f64()).fold(0.0, f64::max)
    }

    /// FNV-1a hash over names, shapes and value bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for &d in p.value.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Same parameters in another precision; gradients and optimizer state reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.push(p.name.clone(), p.value.cast()).expect("names are unique");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push("p", Tensor::from_vec(&[1], vec![value]).unwrap()).unwrap();
        s
    }

    #[test]
    fn rmsprop_single_step_matches_closed_form() {
        let mut s = scalar_store(1.0);
        s.get_mut(ParamId(0)).grad.data_mut()[0] = 1.0;
        s.rmsprop_step(&RmsProp::new(0.1));
        let p = s.get(ParamId(0));
        assert!((p.mean_square.data()[0] - 0.1).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.683_772_233_983_162).abs() < 1e-6);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn rmsprop_zero_gradient_is_noop() {
        let mut s = scalar_store(0.25);
        s.rmsprop_step(&RmsProp::new(0.1));
        assert_eq!(s.get(ParamId(0)).value.data()[0], 0.25);
    }

    #[test]
    fn rmsprop_repeated_gradient_moves_against_sign() {
        let mut s = scalar_store(0.0);
        let mut last = 0.0;
        for _ in 0..20 {
            s.get_mut(ParamId(0)).grad.data_mut()[0] = -0.3;
            s.rmsprop_step(&RmsProp::new(0.01));
            let now = s.get(ParamId(0)).value.data()[0];
            assert!(now > last);
            last = now;
        }
    }

    #[test]
    fn clip_bounds_and_idempotence() {
        let mut s = ParamStore::<f64>::new();
        s.push("w", Tensor::from_vec(&[4], vec![0.5, -0.5, 0.005, -0.001]).unwrap()).unwrap();
        s.clip(0.01).unwrap();
        let once = s.get(ParamId(0)).value.clone();
        assert_eq!(once.data(), &[0.01, -0.01, 0.005, -0.001]);
        s.clip(0.01).unwrap();
        assert_eq!(s.get(ParamId(0)).value, once);
        assert!(s.clip(0.0).is_err());
        assert!(s.clip(-1.0).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(1.0);
        assert!(s.push("p", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let a = scalar_store(1.0);
        let b = scalar_store(1.0);
        let c = scalar_store(1.0 + 1e-12);
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }
}
