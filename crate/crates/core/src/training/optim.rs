use num_traits::Float as _;
use alloc::vec::Vec;

use crate::numerics::{Scalar, Tensor};

/// `base · (step + 1) / warmup` during warmup, `base` after.
pub fn warmup_lr(base: f64, step: usize, warmup: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base
    }
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    /// Rescale the group's gradient to this global L2 norm when larger.
    pub clip: Option<f64>,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &[Tensor<T>], momentum: f64, clip: Option<f64>) -> Self {
        Sgd { momentum, clip, velocity: params.iter().map(|p| alloc::vec![T::zero(); p.numel()]).collect() }
    }

    /// Apply one update; returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[&[T]], lr: f64) -> f64 {
        let norm = grads.iter().flat_map(|g| g.iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
        let factor = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let (mu, f, lr) = (T::from_f64(self.momentum), T::from_f64(factor), T::from_f64(lr));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vv = mu * *vv + f * gv;
                *pv = *pv - lr * *vv;
            }
        }
        norm
    }
}

/// Adam with bias correction, used for full-model pretraining.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: Option<f64>,
    t: u32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], clip: Option<f64>) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![T::zero(); p.numel()]).collect();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[&[T]], lr: f64) -> f64 {
        let norm = grads.iter().flat_map(|g| g.iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
        let f = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c1 = 1.0 - num_traits::Float::powi(self.beta1, self.t as i32);
        let c2 = 1.0 - num_traits::Float::powi(self.beta2, self.t as i32);
        let (b1, b2, f) = (T::from_f64(self.beta1), T::from_f64(self.beta2), T::from_f64(f));
        let (one, eps) = (T::one(), T::from_f64(self.eps));
        let step = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = f * gv;
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                *pv = *pv - step * *mv / ((*vv * inv_c2).sqrt() + eps);
            }
        }
        norm
    }
}
