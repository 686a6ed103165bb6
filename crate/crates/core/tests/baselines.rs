use sivi::baselines::*;
use sivi::distributions::samplers::{neg_binomial, polya_gamma_moments};
use sivi::distributions::RngStream;
use sivi::models::{nb_log_joint, poislog_log_joint, poislog_synth, GammaBetaPrior};
use sivi::ndcore::Tensor;
use sivi::sivi::regularizer_b_k;
use sivi::special::{ln_beta, ln_gamma};

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn column(t: &Tensor, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.get2(i, c)).collect()
}

fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

fn beta_logpdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
}

fn assert_constant(values: &[f64], tol: f64) {
    for v in values {
        assert!(
            (v - values[0]).abs() < tol,
            "kernel ratio varies: {values:?}"
        );
    }
}

#[test]
fn nb_chain_without_data_recovers_prior() {
    let prior = GammaBetaPrior::default();
    let cfg = GibbsConfig {
        burn_in: 0,
        draws: 100_000,
        thin: 1,
        seed: 3,
    };
    let draws = nb_gibbs(&[], &prior, &cfg).unwrap();
    let (m, se) = mean_se(&column(&draws, 0));
    assert!((m - 1.0).abs() < 3.0 * se, "r mean {m} ± {se}");
    let (m, se) = mean_se(&column(&draws, 1));
    assert!((m - 0.5).abs() < 3.0 * se, "p mean {m} ± {se}");
}

#[test]
fn nb_chain_is_consistent() {
    let mut rng = RngStream::new(11);
    let counts: Vec<u64> = (0..2000)
        .map(|_| neg_binomial(2.0, 0.5, &mut rng).unwrap())
        .collect();
    let cfg = GibbsConfig {
        burn_in: 500,
        draws: 2000,
        thin: 1,
        seed: 1,
    };
    let draws = nb_gibbs(&counts, &GammaBetaPrior::default(), &cfg).unwrap();
    let r = mean_se(&column(&draws, 0)).0;
    let p = mean_se(&column(&draws, 1)).0;
    assert!((r - 2.0).abs() < 0.2, "r {r}");
    assert!((p - 0.5).abs() < 0.05, "p {p}");
}

#[test]
fn single_sweep_is_deterministic() {
    let prior = GammaBetaPrior::default();
    let counts = [0, 1, 4, 2, 0, 7];
    let sweep = || {
        let mut st = CountState::default();
        nb_gibbs_step(&mut st, &counts, &prior, &mut RngStream::new(5)).unwrap();
        st
    };
    let (a, b) = (sweep(), sweep());
    assert_eq!(a.r.to_bits(), b.r.to_bits());
    assert_eq!(a.p.to_bits(), b.p.to_bits());
    assert_eq!(a.iteration, 1);
}

#[test]
fn rejects_states_outside_support() {
    assert!(CountState::new(0.0, 0.5).is_err());
    assert!(CountState::new(1.0, 1.0).is_err());
    assert!(CountState::new(1.0, 0.3).is_ok());
}

#[test]
fn poislog_chain_without_data_recovers_prior() {
    let prior = GammaBetaPrior {
        a: 2.0,
        b: 4.0,
        alpha: 3.0,
        beta: 1.0,
    };
    let cfg = GibbsConfig {
        burn_in: 0,
        draws: 100_000,
        thin: 1,
        seed: 8,
    };
    let draws = poislog_gibbs(&[], &prior, &cfg).unwrap();
    let (m, se) = mean_se(&column(&draws, 0));
    assert!((m - 0.5).abs() < 3.0 * se, "r mean {m} ± {se}");
    let (m, se) = mean_se(&column(&draws, 1));
    assert!((m - 0.75).abs() < 3.0 * se, "p mean {m} ± {se}");
}

#[test]
fn gibbs_conditionals_match_the_log_joint() {
    let prior = GammaBetaPrior {
        a: 0.5,
        b: 0.3,
        alpha: 1.5,
        beta: 2.0,
    };
    let pairs = [(3, 2), (0, 0), (5, 3), (1, 1), (8, 4)];
    let n = pairs.len();
    let sum_l: u64 = pairs.iter().map(|p| p.1).sum();
    let sum_n: u64 = pairs.iter().map(|p| p.0).sum();
    let p = 0.37;
    let (shape, rate) = r_conditional(&prior, sum_l as f64, n, p);
    let ratios: Vec<f64> = [0.2, 0.9, 1.7, 3.1, 6.0]
        .iter()
        .map(|&r| poislog_log_joint(r, p, &pairs, &prior) - gamma_logpdf(r, shape, rate))
        .collect();
    assert_constant(&ratios, 1e-10);

    let r = 1.3;
    let (a, b) = p_conditional(&prior, sum_n as f64, n, r);
    let ratios: Vec<f64> = [0.05, 0.2, 0.5, 0.8, 0.97]
        .iter()
        .map(|&p| poislog_log_joint(r, p, &pairs, &prior) - beta_logpdf(p, a, b))
        .collect();
    assert_constant(&ratios, 1e-10);

    // the NB p-conditional needs no augmentation
    let counts = [0, 3, 1, 9, 2];
    let sum_x: u64 = counts.iter().sum();
    let (a, b) = p_conditional(&prior, sum_x as f64, counts.len(), r);
    let ratios: Vec<f64> = [0.05, 0.2, 0.5, 0.8, 0.97]
        .iter()
        .map(|&p| nb_log_joint(r, p, &counts, &prior) - beta_logpdf(p, a, b))
        .collect();
    assert_constant(&ratios, 1e-10);
}

#[test]
fn nb_augmented_r_conditional_matches_joint() {
    // p(x, l | r, p) ∝ r^{Σl} (1 − p)^{N r}: the r-kernel given l is Gamma
    let prior = GammaBetaPrior {
        a: 0.7,
        b: 1.2,
        alpha: 1.0,
        beta: 1.0,
    };
    let (sum_l, n, p) = (6.0, 4, 0.4);
    let (shape, rate) = r_conditional(&prior, sum_l, n, p);
    let ratios: Vec<f64> = [0.1, 0.6, 1.4, 2.5, 7.0]
        .iter()
        .map(|&r: &f64| {
            let joint = sum_l * r.ln() + n as f64 * r * (1.0 - p).ln() + prior.log_density(r, p);
            joint - gamma_logpdf(r, shape, rate)
        })
        .collect();
    assert_constant(&ratios, 1e-10);
}

#[test]
fn poislog_moments_agree_across_seeds() {
    let pairs = poislog_synth(2.0, 0.5, 100, &mut RngStream::new(2)).unwrap();
    let prior = GammaBetaPrior::default();
    let run = |seed| {
        let cfg = GibbsConfig {
            burn_in: 200,
            draws: 20_000,
            thin: 1,
            seed,
        };
        poislog_gibbs(&pairs, &prior, &cfg).unwrap()
    };
    let (a, b) = (run(1), run(2));
    for c in 0..2 {
        let (ma, sa) = mean_se(&column(&a, c));
        let (mb, sb) = mean_se(&column(&b, c));
        // the chains are autocorrelated, so inflate the iid SE generously
        assert!(
            (ma - mb).abs() < 3.0 * 5.0 * (sa * sa + sb * sb).sqrt(),
            "{ma} vs {mb}"
        );
    }
}

#[test]
fn pg_chain_without_data_recovers_prior() {
    let x = Tensor::matrix(0, 2, vec![]).unwrap();
    let cfg = GibbsConfig {
        burn_in: 0,
        draws: 100_000,
        thin: 1,
        seed: 4,
    };
    let draws = pg_gibbs(&x, &[], 0.01, &cfg).unwrap();
    for c in 0..2 {
        let col = column(&draws, c);
        let sq: Vec<f64> = col.iter().map(|b| b * b).collect();
        let (v, se) = mean_se(&sq);
        assert!((v - 100.0).abs() < 3.0 * se, "variance {v} ± {se}");
    }
}

#[test]
fn pg_chain_finds_slope_sign_on_separable_data() {
    let xs: Vec<f64> = (1..=10)
        .flat_map(|i| [i as f64 / 4.0, -(i as f64) / 4.0])
        .collect();
    let y: Vec<f64> = xs
        .iter()
        .map(|&x| if x > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let x = Tensor::matrix(xs.len(), 1, xs).unwrap();
    let cfg = GibbsConfig {
        burn_in: 500,
        draws: 10_000,
        thin: 1,
        seed: 9,
    };
    let draws = pg_gibbs(&x, &y, 0.01, &cfg).unwrap();
    assert!(draws.data().iter().all(|&b| b > 0.0));
}

#[test]
fn pg_omega_update_matches_its_mean() {
    let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    for lambda in [0.1, 1.0, 2.0, 5.0] {
        let mut rng = RngStream::new(21);
        let mut omegas = Vec::with_capacity(20_000);
        for _ in 0..20_000 {
            let mut st = PgState {
                beta: vec![lambda],
                omega: vec![0.0],
                iteration: 0,
            };
            pg_gibbs_step(&mut st, &x, &[1.0], 1.0, &mut rng).unwrap();
            omegas.push(st.omega[0]);
        }
        let (m, se) = mean_se(&omegas);
        let truth = (lambda / 2.0).tanh() / (2.0 * lambda);
        assert!((polya_gamma_moments(lambda).0 - truth).abs() < 1e-12);
        assert!((m - truth).abs() < 3.0 * se, "λ={lambda}: {m} vs {truth}");
    }
}

#[test]
fn pg_step_rejects_bad_inputs() {
    let x = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
    let mut st = PgState::zeros(1, 2);
    let mut rng = RngStream::new(0);
    assert!(pg_gibbs_step(&mut st, &x, &[1.0], 1.0, &mut rng).is_err());
    assert!(pg_gibbs_step(&mut st, &x, &[1.0, 0.0], 0.0, &mut rng).is_err());
    let cfg = GibbsConfig {
        thin: 0,
        ..GibbsConfig::default()
    };
    assert!(nb_gibbs(&[1], &GammaBetaPrior::default(), &cfg).is_err());
}

#[test]
fn mfvi_full_without_data_is_the_prior() {
    let x = Tensor::matrix(0, 3, vec![]).unwrap();
    let fit = mfvi_logistic_full(&x, &[], 0.01, 1).unwrap();
    assert_eq!(fit.mu, vec![0.0; 3]);
    for a in 0..3 {
        for b in 0..3 {
            let want = if a == b { 100.0 } else { 0.0 };
            assert!((fit.cov[a * 3 + b] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn local_parameter_under_identity_second_moment() {
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(local_parameter(&[1.0, 0.0, 0.0], &[0.0; 3], &eye), 1.0);
}

fn small_dataset() -> (Tensor, Vec<f64>) {
    let mut rng = RngStream::new(17);
    let mut xs = Vec::new();
    let mut y = Vec::new();
    for i in 0..10 {
        let a = sivi::distributions::samplers::std_normal(&mut rng);
        let b = sivi::distributions::samplers::std_normal(&mut rng);
        xs.extend([a, b]);
        y.push(if a - 0.5 * b + 0.3 * (i as f64 - 4.5) > 0.0 {
            1.0
        } else {
            0.0
        });
    }
    (Tensor::matrix(10, 2, xs).unwrap(), y)
}

#[test]
fn full_covariance_bound_dominates_diagonal() {
    let (x, y) = small_dataset();
    let full = mfvi_logistic_full_with_tol(&x, &y, 1.0, 5000, 1e-10).unwrap();
    let diag = mfvi_logistic_diag_with_tol(&x, &y, 1.0, 5000, 1e-10).unwrap();
    assert!(full.converged && diag.converged);
    let bf = jj_bound(&x, &y, 1.0, &full.mu, &full.cov, &full.lambda).unwrap();
    let bd = jj_bound(&x, &y, 1.0, &diag.mu, &diag.cov, &diag.lambda).unwrap();
    assert!(bf >= bd - 1e-12, "full {bf} < diag {bd}");
    // diagonal variances understate the full ones
    for v in 0..2 {
        assert!(diag.cov[v * 2 + v] <= full.cov[v * 2 + v] + 1e-12);
    }
}

#[test]
fn mfvi_sweeps_never_decrease_the_bound() {
    let (x, y) = small_dataset();
    for fit in [
        mfvi_logistic_full(&x, &y, 0.5, 200).unwrap(),
        mfvi_logistic_diag(&x, &y, 0.5, 200).unwrap(),
    ] {
        for w in fit.bound_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(fit.lambda.iter().all(|&l| l >= 0.0));
        assert!(fit.sd().iter().all(|&s| s > 0.0));
    }
}

#[test]
fn mfvi_rejects_zero_iterations() {
    let (x, y) = small_dataset();
    assert!(mfvi_logistic_full(&x, &y, 1.0, 0).is_err());
    assert!(mfvi_nb(&[1, 2], &GammaBetaPrior::default(), 0).is_err());
}

#[test]
fn mfvi_nb_is_a_factorized_point_mass_posterior() {
    let counts = [0, 0, 1, 2, 0, 5, 3, 1, 0, 7];
    let fit = mfvi_nb(&counts, &GammaBetaPrior::default(), 1000).unwrap();
    assert!(fit.converged);
    assert!(fit.shape > 0.0 && fit.rate > 0.0 && fit.alpha > 0.0 && fit.beta > 0.0);
    let post = fit.posterior(3).unwrap();
    let mut rng = RngStream::new(0);
    let b = regularizer_b_k(&post, 10, 50, &mut rng).unwrap();
    assert_eq!(b, 0.0);

    let draws = sivi::sivi::posterior_draws(&post, &mut rng, 2000).unwrap();
    let corr = sivi::diagnostics::summary_stats(&draws).unwrap().corr[0][1];
    assert!(corr.abs() < 0.05, "corr {corr}");
}

#[test]
fn mfvi_draws_follow_the_fitted_gaussian() {
    let (x, y) = small_dataset();
    let fit = mfvi_logistic_full(&x, &y, 1.0, 100).unwrap();
    let draws = fit.draws(&mut RngStream::new(1), 20_000).unwrap();
    for v in 0..2 {
        let (m, se) = mean_se(&column(&draws, v));
        assert!((m - fit.mu[v]).abs() < 4.0 * se);
    }
}
