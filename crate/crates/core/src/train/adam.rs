//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamId, ParamStore};
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<ParamId, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// First and second moments of a parameter, if it was ever updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[T], &[T])> {
        self.moments.get(&id).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One update of every parameter present in `grads`. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        for (id, g) in grads.iter() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at element {i} of parameter `{}`",
                    g[i],
                    store.name(id)
                )));
            }
            if g.len() != store.get(id).numel() {
                return Err(Error::invalid(format!("gradient shape mismatch for `{}`", store.name(id))));
            }
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::of(lr);
        for (id, g) in grads.iter() {
            let n = g.len();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let p = store.get_mut(id).data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Mode, Tensor};

    fn grads_for(store: &ParamStore<f64>, g: &[f64]) -> Gradients<f64> {
        // d/dp of sum(p * g) is g.
        let mut graph = Graph::new(store, Mode::Inference);
        let p = graph.param(ParamId(0));
        let c = graph.input(Tensor::new(vec![g.len()], g.to_vec()).unwrap());
        let y = graph.mul(p, c).unwrap();
        let s = graph.sum(y).unwrap();
        graph.backward(s).unwrap()
    }

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store(&[1.0, 1.0]);
        let g = grads_for(&s, &[0.3, -2.0]);
        let mut adam = Adam::default();
        adam.step(&mut s, &g, 0.01).unwrap();
        let p = s.get(ParamId(0)).data();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[0.5]);
        let g = grads_for(&s, &[0.0]);
        let mut adam = Adam::default();
        adam.step(&mut s, &g, 0.1).unwrap();
        assert_eq!(s.get(ParamId(0)).data(), &[0.5]);
        assert_eq!(adam.moments(ParamId(0)).unwrap().0, &[0.0]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut s = store(&[0.5]);
        let mut adam = Adam::default();
        let g = grads_for(&s, &[1.0]);
        adam.step(&mut s, &g, 0.1).unwrap();
        let (m1, v1) = adam.moments(ParamId(0)).map(|(m, v)| (m[0], v[0])).unwrap();
        let g = grads_for(&s, &[0.0]);
        adam.step(&mut s, &g, 0.1).unwrap();
        let (m2, v2) = adam.moments(ParamId(0)).map(|(m, v)| (m[0], v[0])).unwrap();
        assert!((m2 - 0.9 * m1).abs() < 1e-15);
        assert!((v2 - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let mut s = store(&[0.0]);
        let mut adam = Adam::default();
        let lr = 1e-3;
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = s.get(ParamId(0)).data()[0];
            let g = grads_for(&s, &[0.7]);
            adam.step(&mut s, &g, lr).unwrap();
            last = before - s.get(ParamId(0)).data()[0];
        }
        assert!((last - lr).abs() / lr < 0.01, "{last}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = store(&[1.0]);
        let g = grads_for(&s, &[f64::NAN]);
        let err = Adam::default().step(&mut s, &g, 0.1).unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert_eq!(s.get(ParamId(0)).data(), &[1.0]);
    }

    #[test]
    fn quadratic_converges() {
        // f(a, b) = (a - 3)^2 + 2 (b + 1)^2
        let mut s = store(&[0.0, 0.0]);
        let mut adam = Adam::default();
        for _ in 0..5000 {
            let p = s.get(ParamId(0)).data().to_vec();
            let g = grads_for(&s, &[2.0 * (p[0] - 3.0), 4.0 * (p[1] + 1.0)]);
            adam.step(&mut s, &g, 0.01).unwrap();
        }
        let p = s.get(ParamId(0)).data();
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6, "{p:?}");
    }
}
