use rand::Rng;

use super::{check_cols, column, GammaBetaPrior, Model};
use crate::distributions::samplers;
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Var};

/// Poisson-logarithmic bivariate counts `p(n, l | r, p) ∝ r^l p^n (1 − p)^r`
/// with the same gamma/beta priors as the NB model. Latent columns are `(r, p)`.
#[derive(Clone, Debug)]
pub struct PoissonLogModel {
    pairs: Vec<(u64, u64)>,
    pub prior: GammaBetaPrior,
}

impl PoissonLogModel {
    pub fn new(pairs: Vec<(u64, u64)>, prior: GammaBetaPrior) -> Result<Self> {
        prior.validate()?;
        if let Some(&(n, l)) = pairs.iter().find(|(n, l)| l > n) {
            return Err(Error::Dataset(format!("pair (n={n}, l={l}) has l > n")));
        }
        Ok(Self { pairs, prior })
    }

    pub fn pairs(&self) -> &[(u64, u64)] {
        &self.pairs
    }

    /// `(Σ n_i, Σ l_i)` over `batch`.
    pub fn sums(&self, batch: &[usize]) -> Result<(f64, f64)> {
        let mut sn = 0.0;
        let mut sl = 0.0;
        for &i in batch {
            let (n, l) = *self
                .pairs
                .get(i)
                .ok_or_else(|| Error::Dataset(format!("batch index {i} out of range")))?;
            sn += n as f64;
            sl += l as f64;
        }
        Ok((sn, sl))
    }
}

/// `Σ_i [l_i log r + n_i log p + r log(1 − p)]` plus priors; the normalizers
/// `Z_i` do not depend on `(r, p)` and are dropped.
pub fn poislog_log_joint(r: f64, p: f64, pairs: &[(u64, u64)], prior: &GammaBetaPrior) -> f64 {
    let lp = prior.log_density(r, p);
    if !lp.is_finite() {
        return lp;
    }
    let ll: f64 = pairs
        .iter()
        .map(|&(n, l)| l as f64 * r.ln() + n as f64 * p.ln() + r * (1.0 - p).ln())
        .sum();
    ll + lp
}

/// `n_i ~ NB(r, p)` and `l_i ~ CRT(n_i, r)`.
pub fn poislog_synth<R: Rng + ?Sized>(
    r: f64,
    p: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(u64, u64)>> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "need at least one observation".into(),
        ));
    }
    (0..n)
        .map(|_| {
            let count = samplers::neg_binomial(r, p, rng)?;
            Ok((count, samplers::crt(count, r, rng)))
        })
        .collect()
}

impl Model for PoissonLogModel {
    fn dim(&self) -> usize {
        2
    }

    fn data_len(&self) -> usize {
        self.pairs.len()
    }

    fn log_likelihood_on_tape(&self, tape: &Tape, z: Var, batch: &[usize]) -> Result<Var> {
        check_cols(tape, z, 2, "poisson-log likelihood")?;
        let (sn, sl) = self.sums(batch)?;
        let (r, p) = (column(tape, z, 0), column(tape, z, 1));
        let a = tape.scale(tape.ln(r), sl);
        let b = tape.scale(tape.ln(p), sn);
        let lq = tape.ln(tape.add_scalar(tape.neg(p), 1.0));
        let c = tape.scale(tape.mul(r, lq), batch.len() as f64);
        Ok(tape.add(tape.add(a, b), c))
    }

    fn log_prior_on_tape(&self, tape: &Tape, z: Var) -> Result<Var> {
        check_cols(tape, z, 2, "poisson-log prior")?;
        Ok(self
            .prior
            .log_density_on_tape(tape, column(tape, z, 0), column(tape, z, 1)))
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        poislog_log_joint(z[0], z[1], &self.pairs, &self.prior)
    }
}
