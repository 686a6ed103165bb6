use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bounds::lower_bound_grad;
use super::posterior::SemiImplicitPosterior;
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::ndcore::{Adam, DecayedAscent};

/// Number of shared mixture components `K_t` used at iteration `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KSchedule {
    Constant {
        k: usize,
    },
    /// `1 → k_max` linearly over the first half of training, then constant.
    LinearRamp {
        k_max: usize,
    },
}

impl KSchedule {
    pub fn k_at(&self, t: usize, iterations: usize) -> usize {
        match *self {
            KSchedule::Constant { k } => k,
            KSchedule::LinearRamp { k_max } => {
                let half = (iterations / 2).max(1);
                if k_max <= 1 {
                    return k_max;
                }
                if t >= half {
                    k_max
                } else {
                    1 + (k_max - 1) * t / half
                }
            }
        }
    }

    pub fn k_max(&self) -> usize {
        match *self {
            KSchedule::Constant { k } => k,
            KSchedule::LinearRamp { k_max } => k_max,
        }
    }
}

/// Updater for the explicit-layer parameters `ξ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiOptimizer {
    /// Plain ascent with step `base · decay^(t / every)`.
    Decayed {
        base: f64,
        decay: f64,
        every: f64,
    },
    Adam {
        lr: f64,
    },
}

impl Default for XiOptimizer {
    fn default() -> Self {
        XiOptimizer::Decayed {
            base: 0.001,
            decay: 0.9,
            every: 100.0,
        }
    }
}

pub(crate) enum XiStepper {
    Decayed(DecayedAscent),
    Adam(Adam),
}

impl XiStepper {
    pub(crate) fn new(opt: &XiOptimizer, dim: usize) -> Self {
        match *opt {
            XiOptimizer::Decayed { base, decay, every } => {
                Self::Decayed(DecayedAscent::new(base, decay, every))
            }
            XiOptimizer::Adam { lr } => Self::Adam(Adam::new(lr, dim)),
        }
    }

    pub(crate) fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Self::Decayed(o) => o.ascend(params, grad),
            Self::Adam(o) => o.ascend(params, grad),
        }
    }
}

/// Exponential decay `lr · decay^(t / every)` of the `φ` learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub decay: f64,
    pub every: f64,
}

impl LrDecay {
    pub fn factor(&self, t: usize) -> f64 {
        self.decay.powf(t as f64 / self.every)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Draws `z_j` per step.
    pub j: usize,
    pub k_schedule: KSchedule,
    /// Minibatch size `M`; `None` uses every observation.
    pub minibatch: Option<usize>,
    /// Adam learning rate for `φ`.
    pub phi_lr: f64,
    /// Optional decay of `phi_lr`; constant when `None`.
    #[serde(default)]
    pub phi_lr_decay: Option<LrDecay>,
    pub xi_optimizer: XiOptimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            j: 50,
            k_schedule: KSchedule::LinearRamp { k_max: 100 },
            minibatch: None,
            phi_lr: 0.01,
            phi_lr_decay: None,
            xi_optimizer: XiOptimizer::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for `φ` at iteration `t`.
    pub fn phi_lr_at(&self, t: usize) -> f64 {
        self.phi_lr * self.phi_lr_decay.map_or(1.0, |d| d.factor(t))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.j == 0 {
            return Err(Error::Config("j must be at least 1".into()));
        }
        if let Some(m) = self.minibatch {
            if m == 0 || m > n {
                return Err(Error::Config(format!(
                    "minibatch size {m} must lie in 1..={n}"
                )));
            }
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let xi_ok = match self.xi_optimizer {
            XiOptimizer::Decayed { base, decay, every } => {
                positive(base) && positive(decay) && positive(every)
            }
            XiOptimizer::Adam { lr } => positive(lr),
        };
        let decay_ok = self
            .phi_lr_decay
            .is_none_or(|d| positive(d.decay) && d.decay <= 1.0 && positive(d.every));
        if !positive(self.phi_lr) || !xi_ok || !decay_ok {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// A trained posterior with the per-iteration surrogate bound and `K_t`.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub posterior: SemiImplicitPosterior,
    pub trace: Vec<f64>,
    pub k_trace: Vec<usize>,
}

/// Indices of a minibatch drawn without replacement; all indices when `m` is `None`.
pub(crate) fn draw_minibatch<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: Option<usize>,
) -> Vec<usize> {
    match m {
        Some(m) if m < n => {
            let mut idx = index::sample(rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Maximizes `L̲_{K_t}` by pathwise gradients, updating `ξ` then `φ` every step.
pub fn train<M: Model + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    if !post.conditional.is_reparameterizable() {
        return Err(Error::UseConjugate);
    }
    let n = model.data_len();
    cfg.validate(n.max(1))?;
    let mut post = post.clone();
    let mut rng = RngStream::new(cfg.seed);
    let mut phi_opt = Adam::new(cfg.phi_lr, post.phi().len());
    let mut xi_opt = XiStepper::new(&cfg.xi_optimizer, post.conditional.xi().len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut k_trace = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let k = cfg.k_schedule.k_at(t, cfg.iterations);
        let batch = draw_minibatch(&mut rng, n, cfg.minibatch);
        let g = lower_bound_grad(&post, model, &batch, n, k, cfg.j, &mut rng)?;
        let value = g.estimate.value;
        if value.is_nan() || g.phi.iter().chain(&g.xi).any(|v| v.is_nan()) {
            return Err(Error::NanBound {
                iteration: t,
                trace,
            });
        }
        if !g.xi.is_empty() {
            xi_opt.ascend(post.conditional.xi_mut(), &g.xi);
        }
        phi_opt.lr = cfg.phi_lr_at(t);
        phi_opt.ascend(post.phi_mut(), &g.phi);
        trace.push(value);
        k_trace.push(k);
    }
    Ok(TrainOutput {
        posterior: post,
        trace,
        k_trace,
    })
}
