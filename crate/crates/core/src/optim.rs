//! First-order optimizers over a [`ParamStore`]. Parameters without a
//! gradient in a step are left untouched.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam { lr: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl OptimizerConfig {
    pub fn build(self) -> Optimizer {
        match self {
            OptimizerConfig::Adam { lr } => Optimizer::Adam(Adam::new(lr)),
            OptimizerConfig::Sgd { lr, momentum } => Optimizer::Sgd(Sgd::new(lr, momentum)),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }
}

pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        match self {
            Optimizer::Adam(o) => o.step(params, grads),
            Optimizer::Sgd(o) => o.step(params, grads),
        }
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        if self.m.len() < params.len() {
            self.m.resize(params.len(), None);
            self.v.resize(params.len(), None);
        }
        for (id, g) in grads.iter() {
            let p = params.get_mut(id).data_mut();
            let m = self.m[id.0].get_or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v[id.0].get_or_insert_with(|| vec![0.0; p.len()]);
            for (((w, g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Option<Vec<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        for (id, g) in grads.iter() {
            let p = params.get_mut(id).data_mut();
            let vel = self.velocity[id.0].get_or_insert_with(|| vec![0.0; p.len()]);
            for ((w, g), u) in p.iter_mut().zip(g.data()).zip(vel.iter_mut()) {
                *u = self.momentum * *u + g;
                *w -= self.lr * *u;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::tensor::Tensor;

    fn minimize(cfg: OptimizerConfig, steps: usize) -> f64 {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(3.0));
        let mut opt = cfg.build();
        for _ in 0..steps {
            let mut g = Graph::new();
            let a = g.param(&store, x);
            let l = g.mul(a, a).unwrap();
            let grads = g.backward(l).unwrap();
            opt.step(&mut store, &grads);
        }
        store.get(x).item().unwrap()
    }

    #[test]
    fn both_optimizers_descend_a_quadratic() {
        assert!(minimize(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9 }, 200).abs() < 1e-3);
        assert!(minimize(OptimizerConfig::Adam { lr: 0.05 }, 500).abs() < 1e-2);
    }
}
