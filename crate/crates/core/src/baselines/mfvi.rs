use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::gibbs::{cholesky_with_jitter, gaussian_natural};
use crate::distributions::samplers::{polya_gamma_moments, std_normal};
use crate::error::{Error, Result};
use crate::models::GammaBetaPrior;
use crate::ndcore::Tensor;
use crate::sivi::{
    ConjugateConditional, ExplicitConditional, Factor, ImplicitMixer, SemiImplicitPosterior,
};
use crate::special::digamma;

/// Convergence threshold on the largest parameter change in one sweep.
pub const MFVI_TOL: f64 = 1e-8;

/// Gaussian `q(β) = N(μ, Σ)` and the local variational parameters `λ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfviLogistic {
    pub mu: Vec<f64>,
    /// Row-major covariance; diagonal for the mean-field variant.
    pub cov: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Jaakkola–Jordan bound after every sweep.
    pub bound_trace: Vec<f64>,
}

impl MfviLogistic {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sd(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|v| self.cov[v * d + v].sqrt()).collect()
    }

    /// `n` draws from `q(β)` as a `[n, d]` matrix.
    pub fn draws<R: rand::Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Tensor> {
        let d = self.dim();
        let chol = cholesky_with_jitter(DMatrix::from_row_slice(d, d, &self.cov))?;
        let l = chol.l();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let eps = DVector::from_iterator(d, (0..d).map(|_| std_normal(rng)));
            let v = &l * eps;
            out.extend((0..d).map(|i| self.mu[i] + v[i]));
        }
        Tensor::matrix(n, d, out)
    }
}

fn second_moment(x: &[f64], mu: &[f64], cov: &[f64]) -> f64 {
    let d = mu.len();
    let m: f64 = x.iter().zip(mu).map(|(a, b)| a * b).sum();
    let mut q = 0.0;
    for a in 0..d {
        for b in 0..d {
            q += x[a] * cov[a * d + b] * x[b];
        }
    }
    m * m + q
}

fn ln_det_cov(cov: &[f64], d: usize) -> Result<f64> {
    let chol = cholesky_with_jitter(DMatrix::from_row_slice(d, d, cov))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Jaakkola–Jordan lower bound on the log evidence at `(μ, Σ, λ)`.
pub fn jj_bound(
    x: &Tensor,
    y: &[f64],
    alpha: f64,
    mu: &[f64],
    cov: &[f64],
    lambda: &[f64],
) -> Result<f64> {
    let d = mu.len();
    let mut total = 0.0;
    for i in 0..x.rows() {
        let xi = x.row(i);
        let lam = lambda[i];
        let mean_eta: f64 = xi.iter().zip(mu).map(|(a, b)| a * b).sum();
        let e2 = second_moment(xi, mu, cov);
        let w = polya_gamma_moments(lam).0;
        // −ln(2 cosh(λ/2)), written stably
        let ln2cosh = lam.abs() / 2.0 + (-lam.abs()).exp().ln_1p();
        total += (y[i] - 0.5) * mean_eta - ln2cosh - 0.5 * w * (e2 - lam * lam);
    }
    let tr: f64 = (0..d).map(|v| mu[v] * mu[v] + cov[v * d + v]).sum();
    let prior = 0.5 * d as f64 * alpha.ln() - 0.5 * alpha * tr;
    let entropy = 0.5 * ln_det_cov(cov, d)? + 0.5 * d as f64;
    Ok(total + prior + entropy)
}

fn check(x: &Tensor, y: &[f64], alpha: f64, iters: usize) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Shape {
            op: "mfvi data",
            expected: vec![x.rows()],
            got: vec![y.len()],
        });
    }
    if iters == 0 || alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(
            "need iters >= 1 and a positive prior precision".into(),
        ));
    }
    Ok(())
}

/// `λ = √E[(x′β)²]` under `β ~ N(μ, Σ)`.
pub fn local_parameter(x: &[f64], mu: &[f64], cov: &[f64]) -> f64 {
    second_moment(x, mu, cov).sqrt()
}

fn update_lambda(x: &Tensor, mu: &[f64], cov: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .map(|i| local_parameter(x.row(i), mu, cov))
        .collect()
}

/// Full-covariance updates: `Σ = (A + X′ΩX)⁻¹`, `μ = Σ X′(y − ½)`, then
/// `λ_i = √E[(x_i′β)²]` with `Ω = diag(E ω_i)`.
pub fn mfvi_logistic_full(x: &Tensor, y: &[f64], alpha: f64, iters: usize) -> Result<MfviLogistic> {
    mfvi_logistic_full_with_tol(x, y, alpha, iters, MFVI_TOL)
}

/// As [`mfvi_logistic_full`] with an explicit convergence threshold.
pub fn mfvi_logistic_full_with_tol(
    x: &Tensor,
    y: &[f64],
    alpha: f64,
    iters: usize,
    tol: f64,
) -> Result<MfviLogistic> {
    check(x, y, alpha, iters)?;
    let d = x.cols();
    let mut lambda = vec![0.0; x.rows()];
    let mut mu = vec![0.0; d];
    let mut cov = vec![0.0; d * d];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut it = 0;
    while it < iters {
        it += 1;
        let omega: Vec<f64> = lambda.iter().map(|&l| polya_gamma_moments(l).0).collect();
        let (prec, h) = gaussian_natural(x, y, &omega, alpha);
        let chol = cholesky_with_jitter(prec)?;
        let new_mu: Vec<f64> = chol.solve(&h).iter().copied().collect();
        let inv = chol.inverse();
        let new_cov: Vec<f64> = (0..d * d).map(|k| inv[(k / d, k % d)]).collect();
        let new_lambda = update_lambda(x, &new_mu, &new_cov);
        let change = max_change(&[(&mu, &new_mu), (&cov, &new_cov), (&lambda, &new_lambda)]);
        (mu, cov, lambda) = (new_mu, new_cov, new_lambda);
        trace.push(jj_bound(x, y, alpha, &mu, &cov, &lambda)?);
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(MfviLogistic {
        mu,
        cov,
        lambda,
        iterations: it,
        converged,
        bound_trace: trace,
    })
}

/// Fully factorized updates, one coordinate of `β` at a time:
/// `σ_v² = (α + Σ_i E ω_i x_iv²)⁻¹` and
/// `μ_v = σ_v² Σ_i x_iv [(y_i − ½) − E ω_i Σ_{u≠v} x_iu μ_u]`.
pub fn mfvi_logistic_diag(x: &Tensor, y: &[f64], alpha: f64, iters: usize) -> Result<MfviLogistic> {
    mfvi_logistic_diag_with_tol(x, y, alpha, iters, MFVI_TOL)
}

/// As [`mfvi_logistic_diag`] with an explicit convergence threshold.
pub fn mfvi_logistic_diag_with_tol(
    x: &Tensor,
    y: &[f64],
    alpha: f64,
    iters: usize,
    tol: f64,
) -> Result<MfviLogistic> {
    check(x, y, alpha, iters)?;
    let (n, d) = (x.rows(), x.cols());
    let mut lambda = vec![0.0; n];
    let mut mu = vec![0.0; d];
    let mut var = vec![1.0 / alpha; d];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut it = 0;
    let diag_cov = |var: &[f64]| {
        let mut c = vec![0.0; d * d];
        for v in 0..d {
            c[v * d + v] = var[v];
        }
        c
    };
    while it < iters {
        it += 1;
        let (old_mu, old_var) = (mu.clone(), var.clone());
        let omega: Vec<f64> = lambda.iter().map(|&l| polya_gamma_moments(l).0).collect();
        let mut eta: Vec<f64> = (0..n)
            .map(|i| x.row(i).iter().zip(&mu).map(|(a, b)| a * b).sum())
            .collect();
        for v in 0..d {
            let prec = alpha + (0..n).map(|i| omega[i] * x.get2(i, v).powi(2)).sum::<f64>();
            var[v] = 1.0 / prec;
            let s: f64 = (0..n)
                .map(|i| {
                    let xiv = x.get2(i, v);
                    let rest = eta[i] - xiv * mu[v];
                    xiv * ((y[i] - 0.5) - omega[i] * rest)
                })
                .sum();
            let new = var[v] * s;
            for (i, e) in eta.iter_mut().enumerate() {
                *e += x.get2(i, v) * (new - mu[v]);
            }
            mu[v] = new;
        }
        let cov = diag_cov(&var);
        let new_lambda = update_lambda(x, &mu, &cov);
        let change = max_change(&[(&old_mu, &mu), (&old_var, &var), (&lambda, &new_lambda)]);
        lambda = new_lambda;
        trace.push(jj_bound(x, y, alpha, &mu, &cov, &lambda)?);
        if change < tol {
            converged = true;
            break;
        }
    }
    let cov = diag_cov(&var);
    Ok(MfviLogistic {
        mu,
        cov,
        lambda,
        iterations: it,
        converged,
        bound_trace: trace,
    })
}

fn max_change(pairs: &[(&Vec<f64>, &Vec<f64>)]) -> f64 {
    pairs
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// `q(r, p) = Gamma(r; shape, rate) Beta(p; alpha, beta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfviNb {
    pub shape: f64,
    pub rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MfviNb {
    /// The factorized `q` as a semi-implicit posterior with a point-mass mixer.
    pub fn posterior(&self, noise_dim: usize) -> Result<SemiImplicitPosterior> {
        let psi = [
            self.shape.ln(),
            self.rate.ln(),
            self.alpha.ln(),
            self.beta.ln(),
        ];
        let cond = ConjugateConditional::new(vec![Factor::Gamma, Factor::Beta])?;
        SemiImplicitPosterior::new(
            ImplicitMixer::point_mass(noise_dim, &psi)?,
            ExplicitConditional::Conjugate(cond),
        )
    }
}

/// Coordinate ascent for the negative binomial model under CRT augmentation.
///
/// With `r̃ = exp E ln r`, the table counts have `E l_i = r̃ (ψ(x_i + r̃) − ψ(r̃))`;
/// then `q(r) = Gamma(a + Σ E l_i, b − N E ln(1 − p))` and
/// `q(p) = Beta(α + Σx_i, β + N E r)`.
pub fn mfvi_nb(counts: &[u64], prior: &GammaBetaPrior, iters: usize) -> Result<MfviNb> {
    prior.validate()?;
    if iters == 0 {
        return Err(Error::InvalidParameter("need iters >= 1".into()));
    }
    let n = counts.len() as f64;
    let sum_x: f64 = counts.iter().map(|&x| x as f64).sum();
    let (mut shape, mut rate) = (1.0_f64, 1.0_f64);
    let alpha = prior.alpha + sum_x;
    let mut beta = prior.beta + n;
    let mut it = 0;
    let mut converged = false;
    while it < iters {
        it += 1;
        let r_tilde = (digamma(shape) - rate.ln()).exp();
        let sum_l: f64 = counts
            .iter()
            .filter(|&&x| x > 0)
            .map(|&x| r_tilde * (digamma(x as f64 + r_tilde) - digamma(r_tilde)))
            .sum();
        let e_ln1m_p = digamma(beta) - digamma(alpha + beta);
        let new_shape = prior.a + sum_l;
        let new_rate = prior.b - n * e_ln1m_p;
        let new_beta = prior.beta + n * new_shape / new_rate;
        let change = [(shape, new_shape), (rate, new_rate), (beta, new_beta)]
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (shape, rate, beta) = (new_shape, new_rate, new_beta);
        if change < MFVI_TOL {
            converged = true;
            break;
        }
    }
    Ok(MfviNb {
        shape,
        rate,
        alpha,
        beta,
        iterations: it,
        converged,
    })
}
