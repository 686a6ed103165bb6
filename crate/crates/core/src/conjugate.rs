//! Score-function gradients for semi-implicit posteriors whose explicit layer
//! is a product of gamma and beta factors.
//!
//! The surrogate differentiated here is, per draw `j`,
//!
//! ```text
//! ELBO(ψ_j) + log r_j + ⌊log r_j⌋ · log q(z_j | ψ_j)
//! ```
//!
//! where `ELBO(ψ)` is the closed-form mean-field ELBO of the conditional at `ψ`,
//! `log r_j = log q(z_j | ψ_j) − log` of the `(K+1)`-component mixture, `z_j` is
//! held fixed and `⌊·⌋` stops the gradient. Its expected gradient is the
//! gradient of `L̲_K`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::models::{Model, PoissonLogModel};
use crate::ndcore::{log_mean_exp, Adam, Tape, Tensor, Var};
use crate::sivi::bounds::{clip_terms, components, log_target};
use crate::sivi::train::draw_minibatch;
use crate::sivi::{
    ConjugateConditional, ExplicitConditional, Factor, SemiImplicitPosterior, TrainConfig,
    TrainOutput,
};

/// `log r` and the `K + 1` conditional log densities it was built from
/// (generating component first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRatioTerms {
    pub log_r: f64,
    pub components: Vec<f64>,
}

/// `log r(z, ε, ε^(1:K)) = log q(z | T_φ(ε)) − log mean_{c} q(z | T_φ(ε_c))`
/// over `ε` and every row of `eps_batch`.
pub fn density_ratio(
    post: &SemiImplicitPosterior,
    z: &[f64],
    eps: &[f64],
    eps_batch: &Tensor,
) -> Result<DensityRatioTerms> {
    let g = post.mixer.noise_dim();
    if eps.len() != g || (!eps_batch.is_empty() && eps_batch.cols() != g) {
        return Err(Error::Shape {
            op: "density_ratio noise",
            expected: vec![g],
            got: vec![eps.len()],
        });
    }
    let psi = post
        .mixer
        .mlp
        .forward(&Tensor::matrix(1, g, eps.to_vec())?)?;
    let mut comps = vec![post.conditional.log_density(z, psi.row(0))];
    if !eps_batch.is_empty() {
        let psis = post.mixer.mlp.forward(eps_batch)?;
        comps.extend((0..psis.rows()).map(|k| post.conditional.log_density(z, psis.row(k))));
    }
    // a fixed summation order makes the result bitwise invariant to the order of eps_batch
    let mut sorted = comps[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.insert(0, comps[0]);
    Ok(DensityRatioTerms {
        log_r: comps[0] - log_mean_exp(&sorted),
        components: comps,
    })
}

/// Expectations under one factor of `q(z | ψ)`, each a `[J]` node.
#[derive(Clone, Copy, Debug)]
pub struct FactorMoments {
    pub mean: Var,
    pub mean_ln: Var,
    /// `E ln(1 − z)`; beta factors only.
    pub mean_ln1m: Option<Var>,
}

/// Closed-form expected log joint for models whose conditionals are conjugate
/// to gamma/beta variational factors.
pub trait ConjugateModel: Model {
    /// The factor family expected for each latent coordinate.
    fn factors(&self) -> Vec<Factor>;

    /// `E_{z ~ q(z|ψ_j)} [(N/M) log p(batch | z) + log p(z)]` for every row.
    fn expected_log_joint_on_tape(
        &self,
        tape: &Tape,
        moments: &[FactorMoments],
        batch: &[usize],
        n: usize,
    ) -> Result<Var>;
}

impl ConjugateModel for PoissonLogModel {
    fn factors(&self) -> Vec<Factor> {
        vec![Factor::Gamma, Factor::Beta]
    }

    fn expected_log_joint_on_tape(
        &self,
        tape: &Tape,
        moments: &[FactorMoments],
        batch: &[usize],
        n: usize,
    ) -> Result<Var> {
        let (r, p) = (moments[0], moments[1]);
        let ln1m_p = p
            .mean_ln1m
            .ok_or_else(|| Error::MissingHooks("p needs a beta factor".into()))?;
        let pr = &self.prior;
        let mut out = tape.add(
            tape.add(tape.scale(r.mean_ln, pr.a - 1.0), tape.scale(r.mean, -pr.b)),
            tape.add(
                tape.scale(p.mean_ln, pr.alpha - 1.0),
                tape.scale(ln1m_p, pr.beta - 1.0),
            ),
        );
        if !batch.is_empty() {
            let (sn, sl) = self.sums(batch)?;
            let scale = n as f64 / batch.len() as f64;
            let ll = tape.add(
                tape.add(tape.scale(r.mean_ln, sl), tape.scale(p.mean_ln, sn)),
                tape.scale(tape.mul(r.mean, ln1m_p), batch.len() as f64),
            );
            out = tape.add(out, tape.scale(ll, scale));
        }
        let c = pr.a * pr.b.ln()
            - crate::special::ln_gamma(pr.a)
            - crate::special::ln_beta(pr.alpha, pr.beta);
        Ok(tape.add_scalar(out, c))
    }
}

fn factor_params(tape: &Tape, psi: Var, f: usize) -> (Var, Var, Var, Var) {
    let rows = tape.shape(psi)[0];
    let col = |c: usize| tape.reshape(tape.slice_cols(psi, c, c + 1), vec![rows]);
    let (l0, l1) = (col(2 * f), col(2 * f + 1));
    (l0, l1, tape.exp(l0), tape.exp(l1))
}

/// Moments and total entropy of `q(z | ψ)` for every row of `psi`.
fn moments_and_entropy(
    tape: &Tape,
    cond: &ConjugateConditional,
    psi: Var,
) -> (Vec<FactorMoments>, Var) {
    let mut moments = Vec::with_capacity(cond.dim());
    let mut entropy: Option<Var> = None;
    for (f, fac) in cond.factors.iter().enumerate() {
        let (la, lb, a, b) = factor_params(tape, psi, f);
        let (m, h) = match fac {
            Factor::Gamma => {
                let dg = tape.digamma(a);
                let m = FactorMoments {
                    mean: tape.exp(tape.sub(la, lb)),
                    mean_ln: tape.sub(dg, lb),
                    mean_ln1m: None,
                };
                // a − ln b + lnΓ(a) + (1 − a) ψ(a)
                let one_minus_a = tape.add_scalar(tape.neg(a), 1.0);
                let h = tape.add(
                    tape.add(tape.sub(a, lb), tape.ln_gamma(a)),
                    tape.mul(one_minus_a, dg),
                );
                (m, h)
            }
            Factor::Beta => {
                let s = tape.add(a, b);
                let (dga, dgb, dgs) = (tape.digamma(a), tape.digamma(b), tape.digamma(s));
                let m = FactorMoments {
                    mean: tape.div(a, s),
                    mean_ln: tape.sub(dga, dgs),
                    mean_ln1m: Some(tape.sub(dgb, dgs)),
                };
                // ln B(a, b) − (a − 1) ψ(a) − (b − 1) ψ(b) + (a + b − 2) ψ(a + b)
                let lnb = tape.sub(
                    tape.add(tape.ln_gamma(a), tape.ln_gamma(b)),
                    tape.ln_gamma(s),
                );
                let ta = tape.mul(tape.add_scalar(a, -1.0), dga);
                let tb = tape.mul(tape.add_scalar(b, -1.0), dgb);
                let ts = tape.mul(tape.add_scalar(s, -2.0), dgs);
                (m, tape.add(tape.sub(tape.sub(lnb, ta), tb), ts))
            }
        };
        moments.push(m);
        entropy = Some(match entropy {
            None => h,
            Some(e) => tape.add(e, h),
        });
    }
    (moments, entropy.expect("at least one factor"))
}

fn hooks<'a, M: ConjugateModel + ?Sized>(
    post: &'a SemiImplicitPosterior,
    model: &M,
) -> Result<&'a ConjugateConditional> {
    match &post.conditional {
        ExplicitConditional::Conjugate(c) if c.factors == model.factors() => Ok(c),
        ExplicitConditional::Conjugate(c) => Err(Error::MissingHooks(format!(
            "model expects factors {:?}, conditional has {:?}",
            model.factors(),
            c.factors
        ))),
        other => Err(Error::MissingHooks(format!(
            "{} conditional",
            other.family()
        ))),
    }
}

/// One draw of the score-function gradient estimator.
#[derive(Clone, Debug)]
pub struct ScoreGradient {
    /// Gradient with respect to `φ`.
    pub phi: Vec<f64>,
    /// Gradient with respect to `ξ`; empty because the factors carry no `ξ`.
    pub xi: Vec<f64>,
    /// `L̲_K` evaluated on the same draws.
    pub bound: f64,
    pub log_r: Vec<f64>,
}

/// Which parts of the surrogate enter the gradient.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Terms {
    All,
    AnalyticOnly,
}

fn estimate<M: ConjugateModel + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    k: usize,
    j: usize,
    rng: &mut R,
    which: Terms,
) -> Result<ScoreGradient> {
    let cond = hooks(post, model)?;
    let tape = Tape::new();
    let c = components(&tape, post, j, k, rng)?;
    let (moments, entropy) = moments_and_entropy(&tape, cond, c.psi_own);
    let elbo = tape.add(
        model.expected_log_joint_on_tape(&tape, &moments, batch, n)?,
        entropy,
    );
    let lmix = c.log_mixture(&tape);
    let log_r = tape.sub(c.own, lmix);
    let log_r_vals = tape.value(log_r);
    let surrogate = match which {
        Terms::All => {
            let score = tape.mul_const(c.own, log_r_vals.clone());
            tape.add(tape.add(elbo, log_r), score)
        }
        Terms::AnalyticOnly => elbo,
    };
    let grads = tape.grad(tape.mean(surrogate))?;
    let target = log_target(&tape, model, c.z, batch, n)?;
    let terms = tape.value(clip_terms(&tape, tape.sub(target, lmix)));
    Ok(ScoreGradient {
        phi: c.phi.gradient(&grads),
        xi: Vec::new(),
        bound: terms.data().iter().sum::<f64>() / j as f64,
        log_r: log_r_vals.into_data(),
    })
}

/// Three-term estimate of `∇_φ L̲_K` over `J` draws sharing `ψ^(1:K)`.
#[allow(clippy::too_many_arguments)]
pub fn score_grad_phi<M: ConjugateModel + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    k: usize,
    j: usize,
    rng: &mut R,
) -> Result<ScoreGradient> {
    estimate(post, model, batch, n, k, j, rng, Terms::All)
}

/// Gradient of the averaged closed-form ELBO alone (the mean-field term).
pub fn analytic_grad_phi<M: ConjugateModel + ?Sized, R: Rng + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    batch: &[usize],
    n: usize,
    j: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(estimate(post, model, batch, n, 0, j, rng, Terms::AnalyticOnly)?.phi)
}

/// Closed-form `ELBO(ψ)` of the conditional at a single `ψ`.
pub fn analytic_elbo<M: ConjugateModel + ?Sized>(
    cond: &ConjugateConditional,
    model: &M,
    psi: &[f64],
    batch: &[usize],
    n: usize,
) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.constant(Tensor::matrix(1, psi.len(), psi.to_vec())?);
    let (moments, entropy) = moments_and_entropy(&tape, cond, p);
    let e = tape.add(
        model.expected_log_joint_on_tape(&tape, &moments, batch, n)?,
        entropy,
    );
    Ok(tape.value(e).data()[0])
}

/// Algorithm 1 with [`score_grad_phi`] in place of pathwise gradients. The
/// returned trace holds `−L̲_{K_t}` per iteration.
pub fn train_conjugate<M: ConjugateModel + ?Sized>(
    post: &SemiImplicitPosterior,
    model: &M,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    hooks(post, model)?;
    let n = model.data_len();
    cfg.validate(n.max(1))?;
    let mut post = post.clone();
    let mut rng = RngStream::new(cfg.seed);
    let mut adam = Adam::new(cfg.phi_lr, post.phi().len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut k_trace = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let k = cfg.k_schedule.k_at(t, cfg.iterations);
        let batch = draw_minibatch(&mut rng, n, cfg.minibatch);
        let g = score_grad_phi(&post, model, &batch, n, k, cfg.j, &mut rng)?;
        if g.bound.is_nan() || g.phi.iter().any(|v| v.is_nan()) {
            return Err(Error::NanBound {
                iteration: t,
                trace,
            });
        }
        adam.lr = cfg.phi_lr_at(t);
        adam.ascend(post.phi_mut(), &g.phi);
        trace.push(-g.bound);
        k_trace.push(k);
    }
    Ok(TrainOutput {
        posterior: post,
        trace,
        k_trace,
    })
}
