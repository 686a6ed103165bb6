//! Negative binomial posterior on the red-mite counts: semi-implicit fit,
//! CRT-augmented Gibbs reference and a mean-field baseline.
//!
//! cargo run --release --example negative_binomial [iterations] [k]

use sivi::baselines::{mfvi_nb, nb_gibbs, GibbsConfig};
use sivi::diagnostics::{ks_two_sample, summary_stats};
use sivi::distributions::RngStream;
use sivi::models::{load_counts, GammaBetaPrior, NegBinomialModel};
use sivi::ndcore::Tensor;
use sivi::sivi::*;

fn column(t: &Tensor, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.get2(i, c)).collect()
}

fn main() -> sivi::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8000);
    let k: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);

    let counts = load_counts(concat!(env!("CARGO_MANIFEST_DIR"), "/data/red_mites.txt"))?;
    let prior = GammaBetaPrior::default();
    let gibbs = nb_gibbs(
        &counts,
        &prior,
        &GibbsConfig {
            burn_in: 2000,
            draws: 2000,
            thin: 50,
            seed: 0,
        },
    )?;

    let model = NegBinomialModel::new(counts.clone(), prior)?;
    let mixer = ImplicitMixer::glorot(
        10,
        &[30, 60, 30],
        2,
        NoiseKind::Gaussian,
        &mut RngStream::new(0),
    )?;
    let cond = GaussianConditional::fixed(vec![Link::Exp, Link::Logistic], 0.004)?;
    let post = SemiImplicitPosterior::new(mixer, ExplicitConditional::Gaussian(cond))?;
    let cfg = TrainConfig {
        iterations,
        k_schedule: KSchedule::Constant { k },
        phi_lr_decay: Some(LrDecay {
            decay: 0.01,
            every: iterations as f64,
        }),
        ..TrainConfig::default()
    };
    let fit = train(&post, &model, &cfg)?;
    let sivi = posterior_draws(&fit.posterior, &mut RngStream::new(1), 2000)?;
    let mfvi = posterior_draws(
        &mfvi_nb(&counts, &prior, 1000)?.posterior(10)?,
        &mut RngStream::new(2),
        2000,
    )?;

    for (name, draws) in [("gibbs", &gibbs), ("sivi", &sivi), ("mfvi", &mfvi)] {
        let s = summary_stats(draws)?;
        print!(
            "{name:<6} mean r {:.3} p {:.3}  sd r {:.3} p {:.3}  corr {:+.3}",
            s.means[0], s.means[1], s.sds[0], s.sds[1], s.corr[0][1]
        );
        if name != "gibbs" {
            let kr = ks_two_sample(&column(draws, 0), &column(&gibbs, 0))?;
            let kp = ks_two_sample(&column(draws, 1), &column(&gibbs, 1))?;
            print!(
                "  KS r {:.4} (p {:.2})  p {:.4} (p {:.2})",
                kr.statistic, kr.p_value, kp.statistic, kp.p_value
            );
        }
        println!();
    }
    Ok(())
}
