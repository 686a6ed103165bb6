//! Non-reparameterizable conditional: a gamma × beta layer trained with
//! score-function gradients on synthetic Poisson-logarithmic data.
//!
//! cargo run --release --example poisson_logarithmic [iterations]

use sivi::baselines::{poislog_gibbs, GibbsConfig};
use sivi::conjugate::train_conjugate;
use sivi::diagnostics::ks_two_sample;
use sivi::distributions::RngStream;
use sivi::models::{poislog_synth, GammaBetaPrior, PoissonLogModel};
use sivi::sivi::*;

fn main() -> sivi::Result<()> {
    let iterations: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(30_000);
    let pairs = poislog_synth(2.0, 0.5, 100, &mut RngStream::new(0))?;
    let prior = GammaBetaPrior::default();
    let gibbs = poislog_gibbs(
        &pairs,
        &prior,
        &GibbsConfig {
            burn_in: 2000,
            draws: 2000,
            thin: 50,
            seed: 0,
        },
    )?;

    let model = PoissonLogModel::new(pairs, prior)?;
    let mixer = ImplicitMixer::glorot(
        10,
        &[30, 60, 30],
        4,
        NoiseKind::Gaussian,
        &mut RngStream::new(0),
    )?;
    let cond = ConjugateConditional::new(vec![Factor::Gamma, Factor::Beta])?;
    let post = SemiImplicitPosterior::new(mixer, ExplicitConditional::Conjugate(cond))?;
    let cfg = TrainConfig {
        iterations,
        j: 100,
        k_schedule: KSchedule::Constant { k: 200 },
        phi_lr_decay: Some(LrDecay {
            decay: 0.01,
            every: iterations as f64,
        }),
        ..TrainConfig::default()
    };
    let fit = train_conjugate(&post, &model, &cfg)?;

    let n = fit.trace.len();
    for q in 0..4 {
        let part = &fit.trace[q * n / 4..(q + 1) * n / 4];
        println!(
            "quartile {q}: mean negative bound {:.3}",
            part.iter().sum::<f64>() / part.len() as f64
        );
    }
    let draws = posterior_draws(&fit.posterior, &mut RngStream::new(1), 2000)?;
    for (c, name) in ["r", "p"].iter().enumerate() {
        let a: Vec<f64> = (0..draws.rows()).map(|i| draws.get2(i, c)).collect();
        let b: Vec<f64> = (0..gibbs.rows()).map(|i| gibbs.get2(i, c)).collect();
        println!(
            "{name}: KS vs Gibbs {:.4}",
            ks_two_sample(&a, &b)?.statistic
        );
    }
    Ok(())
}
