//! Monte Carlo estimators of the surrogate bounds and the two diagnostic gaps.
//!
//! Every estimator draws its randomness in the same order: mixer noise for the
//! `rows` generating `ψ_j`, then the noise (or exact draws) for `z_j`, then the
//! mixer noise for the shared `ψ^(1:K)`. Everything that does not involve the
//! shared components is therefore identical across `K` for a fixed seed, which
//! is what makes paired comparisons across `K` meaningful.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conditional::{ConjugateConditional, ExplicitConditional, GaussianConditional};
use super::posterior::SemiImplicitPosterior;
use crate::distributions::samplers::std_normal;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::ndcore::{log_mean_exp, MlpVars, Tape, Tensor, Var};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-sample terms are clipped to `±TERM_CLIP` before averaging.
pub const TERM_CLIP: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub per_sample_terms: Vec<f64>,
    pub k_used: usize,
    pub ktilde_used: usize,
}

impl BoundEstimate {
    fn from_terms(terms: Vec<f64>, k: usize, ktilde: usize) -> Self {
        let value = terms.iter().sum::<f64>() / terms.len() as f64;
        Self {
            value,
            per_sample_terms: terms,
            k_used: k,
            ktilde_used: ktilde,
        }
    }

    /// Monte Carlo standard error of `value`.
    pub fn std_error(&self) -> f64 {
        let n = self.per_sample_terms.len() as f64;
        if n < 2.0 {
            return f64::NAN;
        }
        let var = self
            .per_sample_terms
            .iter()
            .map(|t| (t - self.value).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    }
}

/// `L̲_K` together with its gradients with respect to `φ` and `ξ`.
#[derive(Clone, Debug)]
pub struct BoundGradient {
    pub estimate: BoundEstimate,
    pub phi: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Taped conditional densities of `rows` draws `z_j ~ q(z | ψ_j)`.
pub(crate) struct Components {
    pub z: Var,
    /// `log q(z_j | ψ_j)`, `[rows]`.
    pub own: Var,
    /// `log q(z_j | ψ^(k))`, `[rows, K]`; `None` when `K = 0`.
    pub mix: Option<Var>,
    pub psi_own: Var,
    pub phi: MlpVars,
    pub xi: Option<Var>,
}

pub(crate) fn components<R: Rng + ?Sized>(
    tape: &Tape,
    post: &SemiImplicitPosterior,
    rows: usize,
    k: usize,
    rng: &mut R,
) -> Result<Components> {
    if rows == 0 {
        return Err(Error::InvalidParameter(
            "need at least one sample (J >= 1)".into(),
        ));
    }
    let mixer = &post.mixer;
    let phi = mixer.mlp.record_params(tape);
    let own_noise = mixer.draw_noise(rng, rows);
    let psi_own = mixer.forward_on_tape(tape, &phi, own_noise)?;
    match &post.conditional {
        ExplicitConditional::Gaussian(g) => {
            gaussian_components(tape, post, g, phi, psi_own, k, rng)
        }
        ExplicitConditional::Conjugate(c) => {
            conjugate_components(tape, post, c, phi, psi_own, k, rng)
        }
    }
}

fn mix_psi<R: Rng + ?Sized>(
    tape: &Tape,
    post: &SemiImplicitPosterior,
    phi: &MlpVars,
    k: usize,
    rng: &mut R,
) -> Result<Option<Var>> {
    if k == 0 {
        return Ok(None);
    }
    let noise = post.mixer.draw_noise(rng, k);
    Ok(Some(post.mixer.forward_on_tape(tape, phi, noise)?))
}

fn gaussian_components<R: Rng + ?Sized>(
    tape: &Tape,
    post: &SemiImplicitPosterior,
    g: &GaussianConditional,
    phi: MlpVars,
    psi_own: Var,
    k: usize,
    rng: &mut R,
) -> Result<Components> {
    let d = g.dim();
    let rows = tape.shape(psi_own)[0];
    let eps: Vec<f64> = (0..rows * d).map(|_| std_normal(rng)).collect();
    let eps = tape.constant(Tensor::matrix(rows, d, eps)?);
    let psi_mix = mix_psi(tape, post, &phi, k, rng)?;

    let xi = if g.xi.is_empty() {
        None
    } else {
        Some(tape.var(Tensor::vector(g.xi.values().to_vec())))
    };
    let (l, linv, logdet) = g.scale_on_tape(tape, xi);
    let x = tape.add(psi_own, tape.matmul_t(eps, false, l, true));
    let z = g.link_on_tape(tape, x);

    // whitened coordinates: (x − ψ) L⁻ᵀ
    let xs = tape.matmul_t(x, false, linv, true);
    let ps_own = tape.matmul_t(psi_own, false, linv, true);
    let own_q = tape.sum_rows(tape.square(tape.sub(xs, ps_own)));
    let offset = tape.sub(
        tape.add_scalar(
            tape.neg(tape.broadcast(logdet, rows)),
            -(d as f64) * HALF_LN_2PI,
        ),
        g.log_jacobian_on_tape(tape, x),
    );
    let own = tape.add(tape.scale(own_q, -0.5), offset);
    let mix = psi_mix.map(|pm| {
        let ps_mix = tape.matmul_t(pm, false, linv, true);
        tape.add_col(tape.scale(tape.pairwise_sq_dist(xs, ps_mix), -0.5), offset)
    });
    Ok(Components {
        z,
        own,
        mix,
        psi_own,
        phi,
        xi,
    })
}

fn conjugate_components<R: Rng + ?Sized>(
    tape: &Tape,
    post: &SemiImplicitPosterior,
    c: &ConjugateConditional,
    phi: MlpVars,
    psi_own: Var,
    k: usize,
    rng: &mut R,
) -> Result<Components> {
    let psi_vals = tape.value(psi_own);
    let rows = psi_vals.rows();
    let mut zs = Vec::with_capacity(rows * c.dim());
    for j in 0..rows {
        zs.extend(c.sample(psi_vals.row(j), rng)?);
    }
    let z_t = Tensor::matrix(rows, c.dim(), zs)?;
    let psi_mix = mix_psi(tape, post, &phi, k, rng)?;

    let stats = tape.constant(c.sufficient_stats(&z_t));
    let z = tape.constant(z_t);
    let (eta_own, a_own) = c.natural_on_tape(tape, psi_own);
    // the diagonal of the same product used for the mixture keeps `own` and
    // `mix` bit-identical when two ψ coincide
    let own = tape.sub(tape.diag(tape.matmul_t(stats, false, eta_own, true)), a_own);
    let mix = psi_mix.map(|pm| {
        let (eta, a) = c.natural_on_tape(tape, pm);
        tape.add_row(tape.matmul_t(stats, false, eta, true), tape.neg(a))
    });
    Ok(Components {
        z,
        own,
        mix,
        psi_own,
        phi,
        xi: None,
    })
}

impl Components {
    /// `[rows, K+1]` with column 0 the generating component.
    pub(crate) fn all(&self, tape: &Tape) -> Var {
        let rows = tape.shape(self.own)[0];
        let own = tape.reshape(self.own, vec![rows, 1]);
        match self.mix {
            Some(m) => tape.concat_cols(own, m),
            None => own,
        }
    }

    /// `log ((1/(K+1)) [q(z_j|ψ_j) + Σ_k q(z_j|ψ^(k))])`, `[rows]`.
    pub(crate) fn log_mixture(&self, tape: &Tape) -> Var {
        tape.log_mean_exp_rows(self.all(tape))
    }
}

/// `(N/M) log p(batch | z_j) + log p(z_j)`, `[rows]`.
pub(crate) fn log_target<M: Model + ?Sized>(
    tape: &Tape,
    model: &M,
    z: Var,
    batch: &[usize],
    n: usize,
) -> Result<Var> {
    let lp = model.log_prior_on_tape(tape, z)?;
    if batch.is_empty() {
        return Ok(lp);
    }
    let ll = model.log_likelihood_on_tape(tape, z, batch)?;
    Ok(tape.add(tape.scale(ll, n as f64 / batch.len() as f64), lp))
}

fn check_model<M: Model + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
) -> Result<()> {
    if model.dim() != post.dim() {
        return Err(Error::Shape {
            op: "model dim",
            expected: vec![post.dim()],
            got: vec![model.dim()],
        });
    }
    if batch.len() > n || batch.iter().any(|&i| i >= model.data_len()) {
        return Err(Error::InvalidParameter(format!(
            "minibatch of {} indices must lie within the {} observations",
            batch.len(),
            model.data_len()
        )));
    }
    Ok(())
}

fn require_reparam(post: &SemiImplicitPosterior) -> Result<()> {
    if post.conditional.is_reparameterizable() {
        Ok(())
    } else {
        Err(Error::UseConjugate)
    }
}

/// Clips the terms and warns if any clip was active.
pub(crate) fn clip_terms(tape: &Tape, terms: Var) -> Var {
    let raw = tape.value(terms);
    let clipped = raw.data().iter().filter(|t| t.abs() > TERM_CLIP).count();
    if clipped > 0 {
        log::warn!("clipped {clipped} per-sample bound terms to ±{TERM_CLIP:e}");
    }
    tape.clamp(terms, -TERM_CLIP, TERM_CLIP)
}

fn lower_terms<M: Model + ?Sized, R: Rng + ?Sized>(
    tape: &Tape,
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    k: usize,
    rows: usize,
    rng: &mut R,
) -> Result<(Var, Components)> {
    check_model(post, model, batch, n)?;
    let c = components(tape, post, rows, k, rng)?;
    let target = log_target(tape, model, c.z, batch, n)?;
    let terms = clip_terms(tape, tape.sub(target, c.log_mixture(tape)));
    Ok((terms, c))
}

/// `L̲_K`: the surrogate lower bound with the generating conditional included
/// in the `(K+1)`-component mixture denominator, averaged over `J` draws.
pub fn lower_bound_k<M: Model + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<BoundEstimate> {
    require_reparam(post)?;
    let tape = Tape::new();
    let (terms, _) = lower_terms(&tape, post, model, batch, n, k, j, rng)?;
    Ok(BoundEstimate::from_terms(
        tape.value(terms).into_data(),
        k,
        1,
    ))
}

/// [`lower_bound_k`] plus its pathwise gradients with respect to `φ` and `ξ`.
pub fn lower_bound_grad<M: Model + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<BoundGradient> {
    require_reparam(post)?;
    let tape = Tape::new();
    let (terms, c) = lower_terms(&tape, post, model, batch, n, k, j, rng)?;
    let grads = tape.grad(tape.mean(terms))?;
    let estimate = BoundEstimate::from_terms(tape.value(terms).into_data(), k, 1);
    let phi = c.phi.gradient(&grads);
    let xi = c.xi.map(|x| grads.wrt(x).into_data()).unwrap_or_default();
    Ok(BoundGradient { estimate, phi, xi })
}

/// `L̄_K`: as [`lower_bound_k`] but the denominator averages only the `K`
/// shared components.
pub fn upper_bound_k<M: Model + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<BoundEstimate> {
    require_reparam(post)?;
    if k == 0 {
        return Err(Error::UpperBoundNeedsK);
    }
    check_model(post, model, batch, n)?;
    let tape = Tape::new();
    let c = components(&tape, post, j, k, rng)?;
    let target = log_target(&tape, model, c.z, batch, n)?;
    let denom = tape.log_mean_exp_rows(c.mix.expect("K >= 1"));
    let terms = clip_terms(&tape, tape.sub(target, denom));
    Ok(BoundEstimate::from_terms(
        tape.value(terms).into_data(),
        k,
        1,
    ))
}

/// `L̲_K^K̃`: the `K̃`-sample importance-weighted version of [`lower_bound_k`],
/// replicated `j_outer` times. All `j_outer · K̃` draws share `ψ^(1:K)`.
#[allow(clippy::too_many_arguments)]
pub fn iw_lower_bound<M: Model + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    k: usize,
    ktilde: usize,
    j_outer: usize,
    rng: &mut R,
) -> Result<BoundEstimate> {
    require_reparam(post)?;
    if ktilde == 0 {
        return Err(Error::InvalidParameter("K̃ must be at least 1".into()));
    }
    let tape = Tape::new();
    let (terms, _) = lower_terms(&tape, post, model, batch, n, k, j_outer * ktilde, rng)?;
    let grouped = tape.reshape(terms, vec![j_outer, ktilde]);
    let out = tape.value(tape.log_mean_exp_rows(grouped)).into_data();
    Ok(BoundEstimate::from_terms(out, k, ktilde))
}

/// `B_K`: mean over `j` of `log q(z_j|ψ_j) − log` of the `(K+1)`-component mixture.
pub fn regularizer_b_k<R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<f64> {
    let tape = Tape::new();
    let c = components(&tape, post, j, k, rng)?;
    let gap = tape.value(tape.sub(c.own, c.log_mixture(&tape)));
    Ok(gap.data().iter().sum::<f64>() / j as f64)
}

/// `A_K` with `z ~ h` drawn through a fresh `ψ'`.
///
/// A pool of `K + 1` iid mixer draws is shared across `j`; every pool member in
/// turn plays the role of the standalone `ψ` while the other `K` form the
/// average. The symmetrized estimator is unbiased and is exactly zero at `K = 1`
/// and for a point-mass mixer.
pub fn correction_a_k<R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("A_K needs K >= 1".into()));
    }
    let tape = Tape::new();
    let c = components(&tape, post, j, k + 1, rng)?;
    let pool = tape.value(c.mix.expect("pool is non-empty"));
    let mut total = 0.0;
    let mut others = Vec::with_capacity(k);
    for row in 0..j {
        let v = pool.row(row);
        let mut acc = 0.0;
        for i in 0..=k {
            others.clear();
            others.extend(
                v.iter()
                    .enumerate()
                    .filter(|&(m, _)| m != i)
                    .map(|(_, &x)| x),
            );
            acc += log_mean_exp(&others) - v[i];
        }
        total += acc / (k + 1) as f64;
    }
    Ok(total / j as f64)
}

/// Which of the generating and shared densities enter the denominator.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Denominator {
    WithOwn,
    SharedOnly,
}

/// Evaluation-only estimator on the full data whose components are recycled
/// from the other draws.
///
/// `J` pairs `(ψ_j, z_j)` are drawn once. For row `j`, the other `J − 1`
/// mixer draws (cyclically after `j`) are cut into `B = ⌊(J − 1)/K⌋` disjoint
/// blocks of `K`; each block is an independent copy of `ψ^(1:K)` for `z_j`, and
/// the row's term is the block average. This stays unbiased while removing the
/// `O(1)` spread a single shared pool leaves in the mean, and it reuses the same
/// draws for every `K`, so estimates at different `K` are exactly paired.
fn pooled<M: Model + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    k: usize,
    j: usize,
    rng: &mut R,
    denom: Denominator,
) -> Result<BoundEstimate> {
    if j == 0 || (k > 0 && k >= j) {
        return Err(Error::InvalidParameter(format!(
            "pooled estimator needs 1 <= J and K < J (J = {j}, K = {k})"
        )));
    }
    if model.dim() != post.dim() {
        return Err(Error::Shape {
            op: "model dim",
            expected: vec![post.dim()],
            got: vec![model.dim()],
        });
    }
    let mixer = &post.mixer;
    let psi = mixer.mlp.forward(&mixer.draw_noise(rng, j))?;
    let d = post.dim();
    let zs: Vec<Vec<f64>> = match &post.conditional {
        ExplicitConditional::Gaussian(g) => {
            let eps: Vec<f64> = (0..j * d).map(|_| std_normal(rng)).collect();
            (0..j)
                .map(|r| g.transform(psi.row(r), &eps[r * d..(r + 1) * d]))
                .collect()
        }
        ExplicitConditional::Conjugate(c) => (0..j)
            .map(|r| c.sample(psi.row(r), rng))
            .collect::<Result<_>>()?,
    };
    let blocks = (j - 1).checked_div(k).unwrap_or(1);
    let mut buf = Vec::with_capacity(k + 1);
    let mut dens = Vec::with_capacity(j);
    let terms = zs
        .iter()
        .enumerate()
        .map(|(r, z)| {
            let target = model.log_joint(z);
            let own = post.conditional.log_density(z, psi.row(r));
            dens.clear();
            let others = if k == 0 { 0 } else { j };
            dens.extend((1..others).map(|o| post.conditional.log_density(z, psi.row((r + o) % j))));
            let mut acc = 0.0;
            for b in 0..blocks {
                buf.clear();
                if denom == Denominator::WithOwn {
                    buf.push(own);
                }
                buf.extend_from_slice(&dens[b * k..(b + 1) * k]);
                acc += (target - log_mean_exp(&buf)).clamp(-TERM_CLIP, TERM_CLIP);
            }
            acc / blocks as f64
        })
        .collect();
    Ok(BoundEstimate::from_terms(terms, k, 1))
}

/// `L̲_K` evaluated with recycled components; see the note on variance above.
pub fn lower_bound_k_pooled<M: Model + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<BoundEstimate> {
    pooled(post, model, k, j, rng, Denominator::WithOwn)
}

/// `L̄_K` evaluated with recycled components.
pub fn upper_bound_k_pooled<M: Model + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<BoundEstimate> {
    if k == 0 {
        return Err(Error::UpperBoundNeedsK);
    }
    pooled(post, model, k, j, rng, Denominator::SharedOnly)
}
