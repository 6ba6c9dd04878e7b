//! Adam with L2 weight decay added to the gradient.

use std::collections::BTreeMap;

use crate::module::{named_params, Module};
use crate::scalar::Scalar;
use crate::tensor::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub steps: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    /// Updates every parameter of `model` that received a gradient.
    pub fn step(&mut self, model: &dyn Module<T>, grads: &Gradients<T>) {
        let c = self.config;
        for (name, param) in named_params(model) {
            let Some(g) = grads.param(param) else { continue };
            let st = self.state.entry(name).or_insert_with(|| Moments {
                steps: 0,
                m: vec![T::ZERO; g.len()],
                v: vec![T::ZERO; g.len()],
            });
            st.steps += 1;
            let t = st.steps as i32;
            let bc1 = 1.0 - c.beta1.powi(t);
            let bc2 = 1.0 - c.beta2.powi(t);
            let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
            let step_size = T::of(c.lr / bc1);
            let bc2_sqrt = T::of(bc2.sqrt());
            let (eps, wd) = (T::of(c.eps), T::of(c.weight_decay));
            let mut p = param.values().to_vec();
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                st.m[i] = b1 * st.m[i] + (T::ONE - b1) * gi;
                st.v[i] = b2 * st.v[i] + (T::ONE - b2) * gi * gi;
                let denom = st.v[i].sqrt() / bc2_sqrt + eps;
                p[i] -= step_size * st.m[i] / denom;
            }
            param.set(p);
        }
    }

    pub fn state(&self) -> &BTreeMap<String, Moments<T>> {
        &self.state
    }

    pub fn restore(&mut self, state: BTreeMap<String, Moments<T>>) {
        self.state = state;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::module::{Param, Visitor};

    struct One(Param<f64>);

    impl Module<f64> for One {
        fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, f64>) {
            v.param("x", &self.0);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let m = One(Param::new([1, 1, 1, 2], vec![3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..300 {
            let x = m.0.tensor(true);
            let loss = x.sub(&crate::Tensor::constant([1, 1, 1, 2], vec![1.0, 1.0])).square().sum();
            opt.step(&m, &loss.backward());
        }
        for v in m.0.values().iter() {
            assert!((v - 1.0).abs() < 1e-2, "{v}");
        }
        assert_eq!(opt.state()["x"].steps, 300);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let m = One(Param::new([1, 1, 1, 1], vec![0.5]));
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() });
        let loss = m.0.tensor(true).scale(4.0).sum();
        opt.step(&m, &loss.backward());
        assert!((m.0.values()[0] - 0.49).abs() < 1e-6);
    }
}
