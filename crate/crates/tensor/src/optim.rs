//! SGD with momentum and Adam(W), stepping a fixed list of params.

use crate::graph::Gradients;
use crate::param::Param;

pub trait Optimizer {
    /// Apply one update; params without a gradient are left untouched.
    fn step(&mut self, grads: &Gradients);
    fn set_lr(&mut self, lr: f64);
    fn lr(&self) -> f64;
}

pub struct Sgd {
    params: Vec<Param>,
    velocity: Vec<Vec<f64>>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(params: Vec<Param>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            params,
            velocity,
            lr,
            momentum,
            weight_decay,
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, grads: &Gradients) {
        for (p, v) in self.params.iter().zip(&mut self.velocity) {
            let Some(g) = grads.param(p) else { continue };
            let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
            p.update(|w| {
                for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    let d = g + wd * *w;
                    *v = mu * *v + d;
                    *w -= lr * *v;
                }
            });
        }
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn lr(&self) -> f64 {
        self.lr
    }
}

pub struct Adam {
    params: Vec<Param>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// Decoupled (AdamW) weight decay.
    weight_decay: f64,
}

impl Adam {
    pub fn new(params: Vec<Param>, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 0.0)
    }

    pub fn with_betas(params: Vec<Param>, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            params,
            m,
            v,
            t: 0,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = grads.param(p) else { continue };
            p.update(|w| {
                for i in 0..w.len() {
                    let gi = g.data()[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    w[i] -= lr * (mh / (vh.sqrt() + eps) + wd * w[i]);
                }
            });
        }
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn lr(&self) -> f64 {
        self.lr
    }
}
