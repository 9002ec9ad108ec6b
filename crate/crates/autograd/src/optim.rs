//! Gradient-descent optimizers over named parameters.
//!
//! Both optimizers apply decoupled-from-schedule weight decay in its classic
//! L2 form: the decay term `wd * w` is added to the gradient before the
//! update, matching the convention of mainstream SGD/Adam implementations.

use crate::params::ParamSet;
use indexmap::IndexMap;
use ndarray::ArrayD;
use std::collections::HashMap;

/// Stochastic gradient descent with momentum.
///
/// `v = momentum * v + (g + wd * w); w -= lr * v`
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: HashMap::new() }
    }

    pub fn step(&mut self, params: &ParamSet, grads: &IndexMap<String, ArrayD<f64>>, lr: f64) {
        for (name, grad) in grads {
            let w = params.value(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
            let mut g = grad.clone();
            if self.weight_decay != 0.0 {
                g.zip_mut_with(&w, |g, &w| *g += self.weight_decay * w);
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            v.zip_mut_with(&g, |v, &g| *v = self.momentum * *v + g);
            let mut w = w;
            w.zip_mut_with(v, |w, &v| *w -= lr * v);
            params.set(name, w);
        }
    }
}

/// Adam with bias correction.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    m: HashMap<String, ArrayD<f64>>,
    v: HashMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Adam { beta1, beta2, eps, weight_decay, step_count: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn step(&mut self, params: &ParamSet, grads: &IndexMap<String, ArrayD<f64>>, lr: f64) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (name, grad) in grads {
            let mut w = params.value(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
            let mut g = grad.clone();
            if self.weight_decay != 0.0 {
                g.zip_mut_with(&w, |g, &w| *g += self.weight_decay * w);
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            m.zip_mut_with(&g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(&g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(&mut w).and(&*m).and(&*v).for_each(|w, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            });
            params.set(name, w);
        }
    }
}
