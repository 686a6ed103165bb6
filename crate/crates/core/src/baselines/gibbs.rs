use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::samplers::{beta, crt, gamma, polya_gamma, std_normal};
use crate::distributions::{RngStream, PG_TRUNCATION};
use crate::error::{Error, Result};
use crate::models::GammaBetaPrior;
use crate::ndcore::Tensor;

/// Diagonal jitter added once when the `β` precision fails to factor.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Chain state of the two count models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountState {
    pub r: f64,
    pub p: f64,
    pub iteration: u64,
}

impl CountState {
    pub fn new(r: f64, p: f64) -> Result<Self> {
        if !(r > 0.0 && p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "state (r={r}, p={p}) outside the support"
            )));
        }
        Ok(Self { r, p, iteration: 0 })
    }
}

impl Default for CountState {
    fn default() -> Self {
        Self {
            r: 1.0,
            p: 0.5,
            iteration: 0,
        }
    }
}

/// `r | p, l ~ Gamma(a + Σl, b − N ln(1 − p))`.
pub fn r_conditional(prior: &GammaBetaPrior, sum_l: f64, n: usize, p: f64) -> (f64, f64) {
    (prior.a + sum_l, prior.b - n as f64 * (-p).ln_1p())
}

/// `p | r ~ Beta(α + Σx, β + N r)`.
pub fn p_conditional(prior: &GammaBetaPrior, sum_x: f64, n: usize, r: f64) -> (f64, f64) {
    (prior.alpha + sum_x, prior.beta + n as f64 * r)
}

fn clamp_open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// One sweep for the negative binomial model with CRT-augmented `r`.
pub fn nb_gibbs_step<R: Rng + ?Sized>(
    state: &mut CountState,
    counts: &[u64],
    prior: &GammaBetaPrior,
    rng: &mut R,
) -> Result<()> {
    let sum_l: u64 = counts.iter().map(|&x| crt(x, state.r, rng)).sum();
    let (shape, rate) = r_conditional(prior, sum_l as f64, counts.len(), state.p);
    state.r = gamma(shape, rate, rng)?.max(f64::MIN_POSITIVE);
    let sum_x: u64 = counts.iter().sum();
    let (a, b) = p_conditional(prior, sum_x as f64, counts.len(), state.r);
    state.p = clamp_open_unit(beta(a, b, rng)?);
    state.iteration += 1;
    Ok(())
}

/// One sweep for the Poisson-logarithmic model; both conditionals are exact.
pub fn poislog_gibbs_step<R: Rng + ?Sized>(
    state: &mut CountState,
    pairs: &[(u64, u64)],
    prior: &GammaBetaPrior,
    rng: &mut R,
) -> Result<()> {
    let sum_l: u64 = pairs.iter().map(|&(_, l)| l).sum();
    let sum_n: u64 = pairs.iter().map(|&(n, _)| n).sum();
    let (shape, rate) = r_conditional(prior, sum_l as f64, pairs.len(), state.p);
    state.r = gamma(shape, rate, rng)?.max(f64::MIN_POSITIVE);
    let (a, b) = p_conditional(prior, sum_n as f64, pairs.len(), state.r);
    state.p = clamp_open_unit(beta(a, b, rng)?);
    state.iteration += 1;
    Ok(())
}

/// Chain state of the Pólya-Gamma logistic sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgState {
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
    pub iteration: u64,
}

impl PgState {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Self {
            beta: vec![0.0; dim],
            omega: vec![0.25; n],
            iteration: 0,
        }
    }
}

/// `x_i′β` for every row.
fn linear_predictor(x: &Tensor, beta: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .map(|i| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect()
}

/// Cholesky factor of `m`, retrying once with `CHOLESKY_JITTER` on the diagonal.
pub(crate) fn cholesky_with_jitter(
    m: DMatrix<f64>,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let jittered = m + DMatrix::identity(n, n) * CHOLESKY_JITTER;
    jittered
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} precision after jitter")))
}

/// Precision `A + X′ΩX` and `X′(y − ½)` of the Gaussian `β` conditional.
pub(crate) fn gaussian_natural(
    x: &Tensor,
    y: &[f64],
    omega: &[f64],
    alpha: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = x.cols();
    let mut prec = DMatrix::identity(d, d) * alpha;
    let mut h = DVector::zeros(d);
    for i in 0..x.rows() {
        let xi = x.row(i);
        for a in 0..d {
            h[a] += xi[a] * (y[i] - 0.5);
            for b in 0..d {
                prec[(a, b)] += omega[i] * xi[a] * xi[b];
            }
        }
    }
    (prec, h)
}

/// One sweep: every `ω_i ~ PG(1, x_i′β)`, then `β ~ N(Σ X′(y − ½), Σ)` with
/// `Σ = (A + X′ΩX)⁻¹` and `A = α I`.
pub fn pg_gibbs_step<R: Rng + ?Sized>(
    state: &mut PgState,
    x: &Tensor,
    y: &[f64],
    alpha: f64,
    rng: &mut R,
) -> Result<()> {
    if x.rows() != y.len() || state.beta.len() != x.cols() || state.omega.len() != y.len() {
        return Err(Error::Shape {
            op: "pg_gibbs_step",
            expected: vec![x.rows(), x.cols()],
            got: vec![y.len(), state.beta.len()],
        });
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "prior precision must be positive, got {alpha}"
        )));
    }
    for (w, psi) in state.omega.iter_mut().zip(linear_predictor(x, &state.beta)) {
        *w = polya_gamma(psi, PG_TRUNCATION, rng)?;
    }
    let (prec, h) = gaussian_natural(x, y, &state.omega, alpha);
    let chol = cholesky_with_jitter(prec)?;
    let mu = chol.solve(&h);
    // β = μ + L⁻ᵀ ε has covariance (L Lᵀ)⁻¹
    let eps = DVector::from_iterator(mu.len(), (0..mu.len()).map(|_| std_normal(rng)));
    let l = chol.l();
    let dev = l
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    state.beta = (mu + dev).iter().copied().collect();
    state.iteration += 1;
    Ok(())
}

/// Chain budget shared by all Gibbs baselines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 2000,
            draws: 10_000,
            thin: 1,
            seed: 0,
        }
    }
}

fn run_chain<S, F, G>(
    cfg: &GibbsConfig,
    state: &mut S,
    mut step: F,
    record: G,
    dim: usize,
) -> Result<Tensor>
where
    F: FnMut(&mut S, &mut RngStream) -> Result<()>,
    G: Fn(&S) -> Vec<f64>,
{
    if cfg.thin == 0 {
        return Err(Error::InvalidParameter("thin must be at least 1".into()));
    }
    let mut rng = RngStream::new(cfg.seed);
    for _ in 0..cfg.burn_in {
        step(state, &mut rng)?;
    }
    let mut out = Vec::with_capacity(cfg.draws * dim);
    for _ in 0..cfg.draws {
        for _ in 0..cfg.thin {
            step(state, &mut rng)?;
        }
        out.extend(record(state));
    }
    Tensor::matrix(cfg.draws, dim, out)
}

/// Post-burn-in `(r, p)` draws of the negative binomial posterior.
pub fn nb_gibbs(counts: &[u64], prior: &GammaBetaPrior, cfg: &GibbsConfig) -> Result<Tensor> {
    let mut st = CountState::default();
    run_chain(
        cfg,
        &mut st,
        |s, rng| nb_gibbs_step(s, counts, prior, rng),
        |s| vec![s.r, s.p],
        2,
    )
}

/// Post-burn-in `(r, p)` draws of the Poisson-logarithmic posterior.
pub fn poislog_gibbs(
    pairs: &[(u64, u64)],
    prior: &GammaBetaPrior,
    cfg: &GibbsConfig,
) -> Result<Tensor> {
    let mut st = CountState::default();
    run_chain(
        cfg,
        &mut st,
        |s, rng| poislog_gibbs_step(s, pairs, prior, rng),
        |s| vec![s.r, s.p],
        2,
    )
}

/// Post-burn-in `β` draws of Bayesian logistic regression.
pub fn pg_gibbs(x: &Tensor, y: &[f64], alpha: f64, cfg: &GibbsConfig) -> Result<Tensor> {
    let mut st = PgState::zeros(x.cols(), x.rows());
    run_chain(
        cfg,
        &mut st,
        |s, rng| pg_gibbs_step(s, x, y, alpha, rng),
        |s| s.beta.clone(),
        x.cols(),
    )
}
