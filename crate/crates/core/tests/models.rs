mod common;

use std::f64::consts::LN_2;
use std::io::Write;

use common::mean_se;
use rand::Rng;
use sivi::distributions::samplers::std_normal;
use sivi::distributions::RngStream;
use sivi::models::*;
use sivi::ndcore::{finite_diff_grad, sigmoid, Tape, Tensor};
use sivi::special::{ln_beta, ln_gamma};

fn gamma_beta_prior(prior: &GammaBetaPrior, r: f64, p: f64) -> f64 {
    prior.a * prior.b.ln() - ln_gamma(prior.a) + (prior.a - 1.0) * r.ln() - prior.b * r
        + (prior.alpha - 1.0) * p.ln()
        + (prior.beta - 1.0) * (1.0 - p).ln()
        - ln_beta(prior.alpha, prior.beta)
}

#[test]
fn nb_empty_data_is_the_prior() {
    let prior = GammaBetaPrior::default();
    let want = gamma_beta_prior(&prior, 1.0, 0.5);
    assert!((nb_log_joint(1.0, 0.5, &[], &prior) - want).abs() < 1e-12);
    let with_zero = nb_log_joint(1.0, 0.5, &[0], &prior);
    assert!((with_zero - (want - LN_2)).abs() < 1e-12);
}

#[test]
fn nb_out_of_range_is_negative_infinity() {
    let prior = GammaBetaPrior::default();
    for (r, p) in [(0.0, 0.5), (-1.0, 0.5), (1.0, 0.0), (1.0, 1.0), (1.0, 1.5)] {
        assert_eq!(nb_log_joint(r, p, &[1, 2], &prior), f64::NEG_INFINITY);
    }
}

#[test]
fn poislog_hand_values() {
    let prior = GammaBetaPrior {
        a: 1.0,
        b: 1.0,
        alpha: 1.0,
        beta: 1.0,
    };
    let base = |r: f64, p: f64| gamma_beta_prior(&prior, r, p);
    let single = poislog_log_joint(1.0, 0.5, &[(0, 0)], &prior);
    assert!((single - (base(1.0, 0.5) - LN_2)).abs() < 1e-12);
    let pair = poislog_log_joint(2.0, 0.5, &[(3, 2)], &prior);
    assert!((pair - (base(2.0, 0.5) - 3.0 * LN_2)).abs() < 1e-12);
    assert_eq!(
        poislog_log_joint(1.0, 1.0, &[(3, 2)], &prior),
        f64::NEG_INFINITY
    );
}

#[test]
fn poislog_rejects_more_tables_than_customers() {
    assert!(PoissonLogModel::new(vec![(2, 3)], GammaBetaPrior::default()).is_err());
}

#[test]
fn poislog_synth_with_tiny_p_is_all_zero() {
    let pairs = poislog_synth(2.0, 1e-12, 200, &mut RngStream::new(1)).unwrap();
    assert!(pairs.iter().all(|&(n, l)| n == 0 && l == 0));
}

#[test]
fn poislog_synth_count_mean() {
    let pairs = poislog_synth(2.0, 0.5, 100_000, &mut RngStream::new(2)).unwrap();
    let n: Vec<f64> = pairs.iter().map(|&(n, _)| n as f64).collect();
    let (m, se) = mean_se(&n);
    assert!((m - 2.0).abs() < 3.0 * se, "{m} ± {se}");
}

/// Unsigned Stirling numbers of the first kind `|s(n, l)|`, `n ≤ max`.
fn stirling_first(max: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; max + 1]; max + 1];
    s[0][0] = 1.0;
    for n in 0..max {
        for l in 1..=n + 1 {
            s[n + 1][l] = n as f64 * s[n][l] + s[n][l - 1];
        }
    }
    s
}

#[test]
fn poislog_synth_matches_the_joint_pmf() {
    let s = stirling_first(4);
    let draws = 100_000;
    for (r, p) in [(1.0, 0.3), (2.0, 0.5)] {
        let pairs = poislog_synth(r, p, draws, &mut RngStream::new(3)).unwrap();
        let mut fact = 1.0;
        for n in 0..=4usize {
            if n > 0 {
                fact *= n as f64;
            }
            for l in 0..=n {
                let want =
                    r.powi(l as i32) * p.powi(n as i32) * (1.0f64 - p).powf(r) * s[n][l] / fact;
                let hits = pairs
                    .iter()
                    .filter(|&&(a, b)| a == n as u64 && b == l as u64)
                    .count();
                let got = hits as f64 / draws as f64;
                let se = (want * (1.0 - want) / draws as f64).sqrt();
                assert!(
                    (got - want).abs() <= 3.0 * se.max(1e-9),
                    "(r,p)=({r},{p}) n={n} l={l}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn logistic_hand_values() {
    let x = Tensor::matrix(3, 2, vec![1.0, 0.5, 1.0, -1.0, 1.0, 2.0]).unwrap();
    let y = vec![1.0, 0.0, 1.0];
    let all = [0, 1, 2];
    let ll = logistic_loglik_batch(&[0.0, 0.0], &x, &y, &all).unwrap();
    assert!((ll + 3.0 * LN_2).abs() < 1e-14);

    let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let alpha = 0.01;
    let joint = logistic_log_joint(&[0.0], &one, &[1.0], alpha).unwrap();
    let prior_at_zero = 0.5 * (alpha / (2.0 * std::f64::consts::PI)).ln();
    assert!((joint - (prior_at_zero - LN_2)).abs() < 1e-14);

    assert!(logistic_log_joint(&[0.0; 3], &x, &y, alpha).is_err());
}

#[test]
fn logistic_partition_sums_to_full_likelihood() {
    let data = load_logistic_csv(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/nodal_synthetic.csv"
    ))
    .unwrap();
    let beta = [-1.0, 0.3, 0.8, -0.4, 1.1, 0.6];
    let all: Vec<usize> = (0..data.len()).collect();
    let full = logistic_loglik_batch(&beta, &data.x, &data.y, &all).unwrap();
    let whole = logistic_loglik_batch(&beta, &data.x, &data.y, &all).unwrap();
    assert_eq!(full.to_bits(), whole.to_bits());

    let mut rng = RngStream::new(4);
    for _ in 0..20 {
        let parts = rng.random_range(2..8);
        let mut blocks = vec![Vec::new(); parts];
        for i in 0..data.len() {
            blocks[rng.random_range(0..parts)].push(i);
        }
        let total: f64 = blocks
            .iter()
            .map(|b| logistic_loglik_batch(&beta, &data.x, &data.y, b).unwrap())
            .sum();
        assert!(
            (total - full).abs() <= 1e-12 * full.abs(),
            "{total} vs {full}"
        );
    }
}

#[test]
fn predictive_probs_examples() {
    let x = Tensor::matrix(2, 2, vec![1.0, 0.3, 1.0, -2.0]).unwrap();
    let same = vec![vec![0.4, -0.7]; 5];
    let s = predictive_probs(&same, &x).unwrap();
    assert!(s.sd.iter().all(|&v| v == 0.0));

    let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let extremes: Vec<Vec<f64>> = (0..100)
        .map(|i| vec![if i % 2 == 0 { -50.0 } else { 50.0 }])
        .collect();
    let s = predictive_probs(&extremes, &one).unwrap();
    assert!((s.mean[0] - 0.5).abs() < 1e-12);
    assert!((s.sd[0] - 0.5 * (100.0f64 / 99.0).sqrt()).abs() < 1e-12);

    assert!(predictive_probs(&same[..1], &x).is_err());
}

#[test]
fn predictive_probs_match_a_large_sample_oracle() {
    // β ~ N(0.4, 0.8²), x = (1)
    let (mu, sd) = (0.4, 0.8);
    let mut rng = RngStream::new(5);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| sigmoid(mu + sd * std_normal(&mut rng)))
            .collect()
    };
    let oracle = draw(1_000_000);
    let (om, _) = mean_se(&oracle);
    let ov = oracle.iter().map(|v| (v - om).powi(2)).sum::<f64>() / (oracle.len() - 1) as f64;

    let probs = draw(1000);
    let betas: Vec<Vec<f64>> = probs.iter().map(|&p| vec![(p / (1.0 - p)).ln()]).collect();
    let s = predictive_probs(&betas, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
    let (m, se) = mean_se(&probs);
    assert!((s.mean[0] - m).abs() < 1e-12);
    assert!(
        (s.mean[0] - om).abs() < 3.0 * se,
        "mean {} vs {om}",
        s.mean[0]
    );
    // sd of a sample sd ≈ sd / sqrt(2(n-1)) for near-normal data
    let sd_se = ov.sqrt() / (2.0 * 999.0f64).sqrt();
    assert!(
        (s.sd[0] - ov.sqrt()).abs() < 3.0 * sd_se,
        "sd {} vs {}",
        s.sd[0],
        ov.sqrt()
    );
}

/// Taped `log p(x, z)` and its gradient in `z` at a single latent vector.
fn taped_joint(model: &dyn Model, z: &[f64]) -> (f64, Vec<f64>) {
    let tape = Tape::new();
    let zv = tape.var(Tensor::matrix(1, z.len(), z.to_vec()).unwrap());
    let batch: Vec<usize> = (0..model.data_len()).collect();
    let ll = model.log_likelihood_on_tape(&tape, zv, &batch).unwrap();
    let lp = model.log_prior_on_tape(&tape, zv).unwrap();
    let total = tape.sum(tape.add(ll, lp));
    let g = tape.grad(total).unwrap();
    (tape.scalar_value(total), g.wrt(zv).into_data())
}

fn check_model_gradient(name: &str, model: &dyn Model, points: &[Vec<f64>]) {
    for z in points {
        let (value, grad) = taped_joint(model, z);
        let plain = model.log_joint(z);
        assert!(
            (value - plain).abs() <= 1e-10 * plain.abs().max(1.0),
            "{name} value {value} vs {plain}"
        );
        let fd = finite_diff_grad(|v| model.log_joint(v), z, 1e-5).unwrap();
        for (i, (a, f)) in grad.iter().zip(&fd).enumerate() {
            let err = (a - f).abs() / f.abs().max(1.0);
            assert!(err <= 1e-6, "{name} at {z:?} coord {i}: {a} vs {f}");
        }
    }
}

#[test]
fn log_joint_gradients_match_finite_differences() {
    let counts = load_counts(concat!(env!("CARGO_MANIFEST_DIR"), "/data/red_mites.txt")).unwrap();
    let nb = NegBinomialModel::new(counts, GammaBetaPrior::default()).unwrap();
    let rp = [vec![1.1, 0.52], vec![0.4, 0.3], vec![3.0, 0.8]];
    check_model_gradient("nb", &nb, &rp);

    let pairs = poislog_synth(2.0, 0.5, 50, &mut RngStream::new(6)).unwrap();
    let pl = PoissonLogModel::new(pairs, GammaBetaPrior::default()).unwrap();
    check_model_gradient("poislog", &pl, &rp);

    let data = load_logistic_csv(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/nodal_synthetic.csv"
    ))
    .unwrap();
    let lr = LogisticModel::new(data.x, data.y, 0.01).unwrap();
    let mut rng = RngStream::new(7);
    let betas: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    check_model_gradient("logistic", &lr, &betas);

    for t in ToyTarget::ALL {
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..t.dim()).map(|_| rng.random_range(0.2..2.5)).collect())
            .collect();
        check_model_gradient(t.name(), &t, &pts);
    }
}

fn grid_integral(t: ToyTarget, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let at = |i: usize| lo + (i as f64 + 0.5) * h;
    match t.dim() {
        1 => {
            (0..n)
                .map(|i| toy_target_logpdf(t, &[at(i)]).exp())
                .sum::<f64>()
                * h
        }
        _ => {
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| toy_target_logpdf(t, &[at(i), at(j)]).exp())
                .sum::<f64>()
                * h
                * h
        }
    }
}

#[test]
fn toy_densities_are_normalized() {
    for t in ToyTarget::ALL {
        let (lo, hi, n) = match (t, t.dim()) {
            (ToyTarget::Gamma, _) => (0.0, 60.0, 200_000),
            (ToyTarget::Laplace, _) => (-80.0, 80.0, 400_000),
            (ToyTarget::Banana, _) => (-30.0, 30.0, 1500),
            (_, 1) => (-20.0, 20.0, 200_000),
            _ => (-15.0, 15.0, 1000),
        };
        let z = grid_integral(t, lo, hi, n);
        assert!((z - 1.0).abs() < 1e-4, "{}: {z}", t.name());
    }
}

#[test]
fn toy_samplers_match_their_densities() {
    let mut rng = RngStream::new(8);
    let n = 100_000;
    for t in ToyTarget::ALL {
        let draws: Vec<Vec<f64>> = (0..n).map(|_| toy_target_sample(t, &mut rng)).collect();
        let first: Vec<f64> = draws.iter().map(|z| z[0]).collect();
        let (m, se) = mean_se(&first);
        let want = match t {
            ToyTarget::Bimodal => 0.3 * -2.0 + 0.7 * 2.0,
            ToyTarget::Gamma => 2.0,
            // E[z₁] = E[z₂²] / 4 = 4 / 4
            ToyTarget::Banana => 1.0,
            _ => 0.0,
        };
        assert!(
            (m - want).abs() < 3.0 * se,
            "{}: mean {m} ± {se} vs {want}",
            t.name()
        );
        if t == ToyTarget::XShaped {
            // equal mixture of ±1.8 covariances: E[z₁z₂] = 0, E[|z₁z₂|] > 0
            let prod: Vec<f64> = draws.iter().map(|z| z[0] * z[1]).collect();
            let (pm, pse) = mean_se(&prod);
            assert!(pm.abs() < 3.0 * pse);
            let pos = draws.iter().filter(|z| z[0] * z[1] > 0.0).count() as f64 / n as f64;
            assert!((pos - 0.5).abs() < 0.01);
        }
    }
}

#[test]
fn toy_gamma_outside_support() {
    assert_eq!(
        toy_target_logpdf(ToyTarget::Gamma, &[0.0]),
        f64::NEG_INFINITY
    );
    assert_eq!(
        toy_target_logpdf(ToyTarget::Gamma, &[-1.0]),
        f64::NEG_INFINITY
    );
}

#[test]
fn csv_loader_prepends_intercept_and_checks_labels() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(&good, "a,y,b\n0.5,1,2\n-1,0,3\n").unwrap();
    let d = load_logistic_csv(&good).unwrap();
    assert_eq!(d.features, vec!["a", "b"]);
    assert_eq!(d.x.shape(), &[2, 3]);
    assert_eq!(d.x.row(0), &[1.0, 0.5, 2.0]);
    assert_eq!(d.y, vec![1.0, 0.0]);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,y\n0.5,2\n").unwrap();
    assert!(load_logistic_csv(&bad).is_err());
    let unlabeled = dir.path().join("unlabeled.csv");
    std::fs::write(&unlabeled, "a,b\n0.5,1\n").unwrap();
    assert!(load_logistic_csv(&unlabeled).is_err());
}

#[test]
fn counts_file_skips_comments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("counts.txt");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "# header\n3\n\n0\n12").unwrap();
    assert_eq!(load_counts(&path).unwrap(), vec![3, 0, 12]);
    std::fs::write(&path, "3\n-1\n").unwrap();
    assert!(load_counts(&path).is_err());
}

#[test]
fn shipped_red_mites_counts() {
    let counts = load_counts(concat!(env!("CARGO_MANIFEST_DIR"), "/data/red_mites.txt")).unwrap();
    assert_eq!(counts.len(), 150);
    let freq: Vec<usize> = (0..=7)
        .map(|k| counts.iter().filter(|&&c| c == k).count())
        .collect();
    assert_eq!(freq, vec![70, 38, 17, 10, 9, 3, 2, 1]);
}
