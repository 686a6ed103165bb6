//! Log joint densities `log p(x, z)` for the toy targets, the negative binomial
//! and Poisson-logarithmic count models and Bayesian logistic regression.

pub mod data;
mod logistic;
mod nb;
mod poislog;
mod toy;

use crate::error::Result;
use crate::ndcore::{Tape, Var};

pub use data::{load_counts, load_logistic_csv, LogisticData};
pub use logistic::{
    logistic_log_joint, logistic_loglik_batch, predictive_probs, LogisticModel, PredictiveSummary,
};
pub use nb::{nb_log_joint, NegBinomialModel};
pub use poislog::{poislog_log_joint, poislog_synth, PoissonLogModel};
pub use toy::{toy_target_logpdf, toy_target_sample, ToyTarget};

/// Hyperparameters of `r ~ Gamma(a, rate b)`, `p ~ Beta(alpha, beta)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GammaBetaPrior {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GammaBetaPrior {
    fn default() -> Self {
        Self {
            a: 0.01,
            b: 0.01,
            alpha: 0.01,
            beta: 0.01,
        }
    }
}

impl GammaBetaPrior {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(crate::Error::InvalidParameter(format!(
                    "prior {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `log Gamma(r; a, b) + log Beta(p; alpha, beta)`, `-inf` outside `(0, ∞) × (0, 1)`.
    pub fn log_density(&self, r: f64, p: f64) -> f64 {
        use crate::special::{ln_beta, ln_gamma};
        if !(r > 0.0 && p > 0.0 && p < 1.0) {
            return f64::NEG_INFINITY;
        }
        self.a * self.b.ln() - ln_gamma(self.a) + (self.a - 1.0) * r.ln() - self.b * r
            + (self.alpha - 1.0) * p.ln()
            + (self.beta - 1.0) * (1.0 - p).ln()
            - ln_beta(self.alpha, self.beta)
    }

    /// Taped prior over columns `r = z[:, 0]`, `p = z[:, 1]`.
    pub(crate) fn log_density_on_tape(&self, tape: &Tape, r: Var, p: Var) -> Var {
        use crate::special::{ln_beta, ln_gamma};
        let c = self.a * self.b.ln() - ln_gamma(self.a) - ln_beta(self.alpha, self.beta);
        let lr = tape.scale(tape.ln(r), self.a - 1.0);
        let br = tape.scale(r, -self.b);
        let lp = tape.scale(tape.ln(p), self.alpha - 1.0);
        let lq = tape.scale(tape.ln(tape.add_scalar(tape.neg(p), 1.0)), self.beta - 1.0);
        tape.add_scalar(tape.add(tape.add(lr, br), tape.add(lp, lq)), c)
    }
}

/// A target `log p(x, z)` split into likelihood and prior, evaluated row-wise
/// on a `[J, dim]` matrix of latent draws.
pub trait Model {
    fn dim(&self) -> usize;

    /// Number of observations `N`; zero for data-free targets.
    fn data_len(&self) -> usize;

    /// `Σ_{i ∈ batch} log p(x_i | z_j)` for every row `j`, as a `[J]` node.
    fn log_likelihood_on_tape(&self, tape: &Tape, z: Var, batch: &[usize]) -> Result<Var>;

    /// `log p(z_j)` for every row, as a `[J]` node.
    fn log_prior_on_tape(&self, tape: &Tape, z: Var) -> Result<Var>;

    /// Full-data `log p(x, z)` for one latent vector.
    fn log_joint(&self, z: &[f64]) -> f64;
}

/// Column `c` of a `[J, d]` node as a `[J]` node.
pub(crate) fn column(tape: &Tape, z: Var, c: usize) -> Var {
    let rows = tape.shape(z)[0];
    tape.reshape(tape.slice_cols(z, c, c + 1), vec![rows])
}

pub(crate) fn check_cols(tape: &Tape, z: Var, dim: usize, op: &'static str) -> Result<usize> {
    let shape = tape.shape(z);
    if shape.len() != 2 || shape[1] != dim {
        return Err(crate::Error::Shape {
            op,
            expected: vec![0, dim],
            got: shape,
        });
    }
    Ok(shape[0])
}
