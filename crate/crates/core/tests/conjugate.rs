mod common;

use sivi::conjugate::*;
use sivi::diagnostics::GaussianSandwichCase;
use sivi::distributions::RngStream;
use sivi::models::{GammaBetaPrior, PoissonLogModel};
use sivi::ndcore::Tensor;
use sivi::sivi::*;
use sivi::special::{digamma, ln_beta, ln_gamma};
use sivi::Error;

fn conjugate_posterior(seed: u64) -> SemiImplicitPosterior {
    let mut rng = RngStream::new(seed);
    let mixer = ImplicitMixer::glorot(3, &[8], 4, NoiseKind::Gaussian, &mut rng).unwrap();
    let cond = ConjugateConditional::new(vec![Factor::Gamma, Factor::Beta]).unwrap();
    SemiImplicitPosterior::new(mixer, ExplicitConditional::Conjugate(cond)).unwrap()
}

fn point_mass_posterior(psi: &[f64]) -> SemiImplicitPosterior {
    let cond = ConjugateConditional::new(vec![Factor::Gamma, Factor::Beta]).unwrap();
    SemiImplicitPosterior::new(
        ImplicitMixer::point_mass(2, psi).unwrap(),
        ExplicitConditional::Conjugate(cond),
    )
    .unwrap()
}

fn toy_model() -> PoissonLogModel {
    let prior = GammaBetaPrior {
        a: 1.0,
        b: 1.0,
        alpha: 1.0,
        beta: 1.0,
    };
    PoissonLogModel::new(vec![(3, 2), (1, 1)], prior).unwrap()
}

fn bias_range(post: &SemiImplicitPosterior) -> std::ops::Range<usize> {
    post.mixer.mlp.params().range("layer0.bias").unwrap()
}

#[test]
fn density_ratio_vanishes_without_mixing_components() {
    let post = conjugate_posterior(1);
    let mut rng = RngStream::new(2);
    let eps = post.mixer.draw_noise(&mut rng, 1);
    let empty = Tensor::matrix(0, 3, vec![]).unwrap();
    for z in [[0.3, 0.2], [2.0, 0.9], [11.0, 0.01]] {
        let terms = density_ratio(&post, &z, eps.row(0), &empty).unwrap();
        assert_eq!(terms.log_r, 0.0);
        assert_eq!(terms.components.len(), 1);
    }
}

#[test]
fn density_ratio_vanishes_for_a_degenerate_mixer() {
    let post = point_mass_posterior(&[0.4, -0.2, 1.1, 0.3]);
    let mut rng = RngStream::new(3);
    let eps = post.mixer.draw_noise(&mut rng, 1);
    let batch = post.mixer.draw_noise(&mut rng, 6);
    let terms = density_ratio(&post, &[1.3, 0.6], eps.row(0), &batch).unwrap();
    assert_eq!(terms.log_r, 0.0);
    assert_eq!(terms.components.len(), 7);
}

#[test]
fn density_ratio_is_permutation_invariant_and_bounded() {
    let post = conjugate_posterior(4);
    let mut rng = RngStream::new(5);
    for k in [1usize, 3, 9] {
        let eps = post.mixer.draw_noise(&mut rng, 1);
        let batch = post.mixer.draw_noise(&mut rng, k);
        let z = [0.8, 0.4];
        let base = density_ratio(&post, &z, eps.row(0), &batch).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..k).map(|i| batch.row(i).to_vec()).collect();
        rows.reverse();
        rows.rotate_left(1 % k);
        let permuted = Tensor::matrix(k, 3, rows.concat()).unwrap();
        let other = density_ratio(&post, &z, eps.row(0), &permuted).unwrap();
        assert_eq!(base.log_r.to_bits(), other.log_r.to_bits());
        assert!(base.log_r <= ((k + 1) as f64).ln());
    }
}

#[test]
fn density_ratio_hand_computed_gaussian_case() {
    // ψ = ε, q(z|ψ) = N(ψ, 1); ψ ∈ {0, 1}, z = 0
    let post = GaussianSandwichCase::new(1.0, 1.0, 0.0)
        .unwrap()
        .posterior()
        .unwrap();
    let batch = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let terms = density_ratio(&post, &[0.0], &[0.0], &batch).unwrap();
    let q0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let q1 = q0 * (-0.5f64).exp();
    let want = q0.ln() - ((q0 + q1) / 2.0).ln();
    assert!(
        (terms.log_r - want).abs() < 1e-14,
        "{} vs {want}",
        terms.log_r
    );
}

#[test]
fn without_mixing_components_the_estimator_is_the_mean_field_gradient() {
    let post = conjugate_posterior(6);
    let model = toy_model();
    let batch = [0, 1];
    let score = score_grad_phi(&post, &model, &batch, 2, 0, 16, &mut RngStream::new(7)).unwrap();
    let analytic = analytic_grad_phi(&post, &model, &batch, 2, 16, &mut RngStream::new(7)).unwrap();
    assert!(score.log_r.iter().all(|&v| v == 0.0));
    assert_eq!(score.phi, analytic);
    assert!(score.xi.is_empty());
}

fn neg_kl(psi: &[f64], prior: &GammaBetaPrior) -> f64 {
    let (a, b, al, be) = (psi[0].exp(), psi[1].exp(), psi[2].exp(), psi[3].exp());
    let kl_gamma = (a - prior.a) * digamma(a) - ln_gamma(a)
        + ln_gamma(prior.a)
        + prior.a * (b.ln() - prior.b.ln())
        + a * (prior.b - b) / b;
    let kl_beta = ln_beta(prior.alpha, prior.beta) - ln_beta(al, be)
        + (al - prior.alpha) * digamma(al)
        + (be - prior.beta) * digamma(be)
        + (prior.alpha - al + prior.beta - be) * digamma(al + be);
    -(kl_gamma + kl_beta)
}

#[test]
fn zero_data_gradient_is_the_kl_gradient() {
    let prior = GammaBetaPrior {
        a: 2.0,
        b: 3.0,
        alpha: 1.5,
        beta: 2.5,
    };
    let model = PoissonLogModel::new(vec![(2, 1)], prior).unwrap();
    let psi = [1.7f64.ln(), 0.8f64.ln(), 2.2f64.ln(), 3.1f64.ln()];
    let post = point_mass_posterior(&psi);
    let bias = bias_range(&post);
    for k in [0usize, 5] {
        let g = score_grad_phi(&post, &model, &[], 0, k, 8, &mut RngStream::new(9)).unwrap();
        assert!(g.log_r.iter().all(|&v| v == 0.0));
        for (i, idx) in bias.clone().enumerate() {
            let h = 1e-5;
            let (mut up, mut down) = (psi, psi);
            up[i] += h;
            down[i] -= h;
            let fd = (neg_kl(&up, &prior) - neg_kl(&down, &prior)) / (2.0 * h);
            assert!(
                (g.phi[idx] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "K={k} ψ{i}: {} vs {fd}",
                g.phi[idx]
            );
        }
    }
}

#[test]
fn analytic_elbo_without_data_is_negative_kl() {
    let prior = GammaBetaPrior {
        a: 2.0,
        b: 3.0,
        alpha: 1.5,
        beta: 2.5,
    };
    let model = PoissonLogModel::new(vec![(2, 1)], prior).unwrap();
    let cond = ConjugateConditional::new(vec![Factor::Gamma, Factor::Beta]).unwrap();
    let psi = [0.3, -0.4, 0.9, 0.1];
    let e = analytic_elbo(&cond, &model, &psi, &[], 0).unwrap();
    assert!((e - neg_kl(&psi, &prior)).abs() < 1e-12);
}

#[test]
fn families_without_hooks_are_rejected() {
    let model = toy_model();
    let gaussian = GaussianSandwichCase::new(0.5, 0.5, 0.0)
        .unwrap()
        .posterior()
        .unwrap();
    let err = score_grad_phi(&gaussian, &model, &[0], 2, 1, 4, &mut RngStream::new(0)).unwrap_err();
    assert!(matches!(err, Error::MissingHooks(_)));

    let swapped = ConjugateConditional::new(vec![Factor::Beta, Factor::Gamma]).unwrap();
    let post = SemiImplicitPosterior::new(
        ImplicitMixer::point_mass(2, &[0.0; 4]).unwrap(),
        ExplicitConditional::Conjugate(swapped),
    )
    .unwrap();
    let err = train_conjugate(&post, &model, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingHooks(_)));
}

#[test]
fn score_gradient_is_unbiased() {
    let post = conjugate_posterior(12);
    let model = toy_model();
    let coords = [0, 7, 19, 30, post.phi().len() - 1];
    let checks =
        common::score_gradient_unbiasedness(&post, &model, 5, 20_000, 200_000, &coords, 13);
    for c in &checks {
        assert!(c.z_score() < 3.0, "{c:?}");
    }
}

#[test]
fn zero_iterations_leave_parameters_unchanged() {
    let post = conjugate_posterior(14);
    let cfg = TrainConfig {
        iterations: 0,
        ..TrainConfig::default()
    };
    let out = train_conjugate(&post, &toy_model(), &cfg).unwrap();
    assert_eq!(out.posterior.phi(), post.phi());
    assert!(out.trace.is_empty());
}

#[test]
fn training_reduces_the_negative_bound() {
    let mut rng = RngStream::new(15);
    let pairs = sivi::models::poislog_synth(2.0, 0.5, 50, &mut rng).unwrap();
    let model = PoissonLogModel::new(pairs, GammaBetaPrior::default()).unwrap();
    let cfg = TrainConfig {
        iterations: 400,
        j: 20,
        k_schedule: KSchedule::Constant { k: 10 },
        phi_lr: 0.02,
        ..TrainConfig::default()
    };
    let out = train_conjugate(&conjugate_posterior(16), &model, &cfg).unwrap();
    let q = out.trace.len() / 4;
    let first = out.trace[..q].iter().sum::<f64>() / q as f64;
    let last = out.trace[3 * q..].iter().sum::<f64>() / q as f64;
    assert!(last < first, "first quartile {first}, last {last}");
    assert_eq!(out.k_trace, vec![10; 400]);
}
