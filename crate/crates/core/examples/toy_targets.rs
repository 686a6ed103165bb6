//! Fits a semi-implicit posterior to each toy target and compares its
//! marginals with exact target draws.
//!
//! cargo run --release --example toy_targets [iterations]

use sivi::diagnostics::ks_two_sample;
use sivi::distributions::RngStream;
use sivi::models::{toy_target_sample, ToyTarget};
use sivi::sivi::*;

fn main() -> sivi::Result<()> {
    let iterations = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    for target in ToyTarget::ALL {
        let d = target.dim();
        let mixer = ImplicitMixer::glorot(
            10,
            &[30, 60, 30],
            d,
            NoiseKind::Gaussian,
            &mut RngStream::new(0),
        )?;
        // positive support needs a positive link
        let link = if target == ToyTarget::Gamma {
            Link::Exp
        } else {
            Link::Identity
        };
        let cond = GaussianConditional::fixed(vec![link; d], 0.1)?;
        let post = SemiImplicitPosterior::new(mixer, ExplicitConditional::Gaussian(cond))?;
        let cfg = TrainConfig {
            iterations,
            phi_lr_decay: Some(LrDecay {
                decay: 0.05,
                every: iterations as f64,
            }),
            ..TrainConfig::default()
        };
        let out = train(&post, &target, &cfg)?;
        let draws = posterior_draws(&out.posterior, &mut RngStream::new(1), 2000)?;
        let mut rng = RngStream::new(2);
        let exact: Vec<Vec<f64>> = (0..2000)
            .map(|_| toy_target_sample(target, &mut rng))
            .collect();
        let stats: Vec<String> = (0..d)
            .map(|c| {
                let fitted: Vec<f64> = (0..draws.rows()).map(|i| draws.get2(i, c)).collect();
                let truth: Vec<f64> = exact.iter().map(|z| z[c]).collect();
                ks_two_sample(&fitted, &truth).map(|r| format!("{:.3}", r.statistic))
            })
            .collect::<sivi::Result<_>>()?;
        let last = out.trace.last().copied().unwrap_or(f64::NAN);
        println!(
            "{:<14} final bound {last:>8.3}  KS per coordinate [{}]",
            target.name(),
            stats.join(", ")
        );
    }
    Ok(())
}
