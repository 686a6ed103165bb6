//! Gradient-ascent updaters. Both maximize: `θ ← θ + step`.

use serde::{Deserialize, Serialize};

/// Adaptive-moment ascent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Plain ascent with step `base · decay^(t / every)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayedAscent {
    pub base: f64,
    pub decay: f64,
    pub every: f64,
    t: u64,
}

impl DecayedAscent {
    pub fn new(base: f64, decay: f64, every: f64) -> Self {
        Self {
            base,
            decay,
            every,
            t: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.base * self.decay.powf(self.t as f64 / self.every)
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        let rho = self.step_size();
        for (p, g) in params.iter_mut().zip(grad) {
            *p += rho * g;
        }
        self.t += 1;
    }
}
