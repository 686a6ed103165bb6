use std::collections::BTreeMap;

use super::{check_cols, column, GammaBetaPrior, Model};
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Var};
use crate::special::ln_gamma;

/// `x_i ~ NB(r, p)` iid with a gamma prior on `r` and a beta prior on `p`.
/// Latent columns are `(r, p)`.
#[derive(Clone, Debug)]
pub struct NegBinomialModel {
    counts: Vec<u64>,
    pub prior: GammaBetaPrior,
}

impl NegBinomialModel {
    pub fn new(counts: Vec<u64>, prior: GammaBetaPrior) -> Result<Self> {
        prior.validate()?;
        Ok(Self { counts, prior })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Full log joint `Σ_i log NB(x_i; r, p) + log Gamma(r; a, b) + log Beta(p; α, β)`.
pub fn nb_log_joint(r: f64, p: f64, counts: &[u64], prior: &GammaBetaPrior) -> f64 {
    let lp = prior.log_density(r, p);
    if !lp.is_finite() {
        return lp;
    }
    let ll: f64 = counts
        .iter()
        .map(|&x| {
            let x = x as f64;
            ln_gamma(x + r) - ln_gamma(r) - ln_gamma(x + 1.0) + x * p.ln() + r * (1.0 - p).ln()
        })
        .sum();
    ll + lp
}

impl Model for NegBinomialModel {
    fn dim(&self) -> usize {
        2
    }

    fn data_len(&self) -> usize {
        self.counts.len()
    }

    fn log_likelihood_on_tape(&self, tape: &Tape, z: Var, batch: &[usize]) -> Result<Var> {
        check_cols(tape, z, 2, "nb likelihood")?;
        let (r, p) = (column(tape, z, 0), column(tape, z, 1));
        let mut groups: BTreeMap<u64, usize> = BTreeMap::new();
        let mut total = 0.0;
        let mut constant = 0.0;
        for &i in batch {
            let x = *self
                .counts
                .get(i)
                .ok_or_else(|| Error::Dataset(format!("batch index {i} out of range")))?;
            *groups.entry(x).or_default() += 1;
            total += x as f64;
            constant -= ln_gamma(x as f64 + 1.0);
        }
        let m = batch.len() as f64;
        let mut acc = tape.scale(tape.ln_gamma(r), -m);
        for (&x, &c) in &groups {
            let t = tape.ln_gamma(tape.add_scalar(r, x as f64));
            acc = tape.add(acc, tape.scale(t, c as f64));
        }
        let lp = tape.scale(tape.ln(p), total);
        let lq = tape.ln(tape.add_scalar(tape.neg(p), 1.0));
        let rq = tape.scale(tape.mul(r, lq), m);
        Ok(tape.add_scalar(tape.add(acc, tape.add(lp, rq)), constant))
    }

    fn log_prior_on_tape(&self, tape: &Tape, z: Var) -> Result<Var> {
        check_cols(tape, z, 2, "nb prior")?;
        Ok(self
            .prior
            .log_density_on_tape(tape, column(tape, z, 0), column(tape, z, 1)))
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        nb_log_joint(z[0], z[1], &self.counts, &self.prior)
    }
}
