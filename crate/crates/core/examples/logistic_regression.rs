//! Bayesian logistic regression with a full-covariance conditional, against
//! Pólya-Gamma Gibbs and diagonal mean-field; reports held-out predictive
//! uncertainty.
//!
//! cargo run --release --example logistic_regression [iterations]

use sivi::baselines::{mfvi_logistic_diag, pg_gibbs, GibbsConfig};
use sivi::diagnostics::summary_stats;
use sivi::distributions::RngStream;
use sivi::models::{load_logistic_csv, predictive_probs, LogisticModel};
use sivi::ndcore::Tensor;
use sivi::sivi::*;

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn main() -> sivi::Result<()> {
    let iterations: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3000);
    let data = load_logistic_csv(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/nodal_synthetic.csv"
    ))?;
    let n = data.y.len();
    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) =
        ((0..n - 10).collect(), (n - 10..n).collect());
    let (tr, te) = (data.subset(&train_rows), data.subset(&test_rows));
    let alpha = 0.01;
    let d = tr.x.cols();

    let gibbs = pg_gibbs(
        &tr.x,
        &tr.y,
        alpha,
        &GibbsConfig {
            burn_in: 2000,
            draws: 5000,
            thin: 5,
            seed: 0,
        },
    )?;
    let model = LogisticModel::new(tr.x.clone(), tr.y.clone(), alpha)?;
    let mixer = ImplicitMixer::glorot(
        50,
        &[100, 200, 100],
        d,
        NoiseKind::Gaussian,
        &mut RngStream::new(0),
    )?;
    let cond = GaussianConditional::full(vec![Link::Identity; d], 0.1)?;
    let post = SemiImplicitPosterior::new(mixer, ExplicitConditional::Gaussian(cond))?;
    let cfg = TrainConfig {
        iterations,
        k_schedule: KSchedule::Constant { k: 500 },
        xi_optimizer: XiOptimizer::Adam { lr: 0.01 },
        ..TrainConfig::default()
    };
    let fit = train(&post, &model, &cfg)?;
    let sivi = posterior_draws(&fit.posterior, &mut RngStream::new(1), 5000)?;
    let mfvi =
        mfvi_logistic_diag(&tr.x, &tr.y, alpha, 5000)?.draws(&mut RngStream::new(2), 5000)?;

    let (sg, ss, sm) = (
        summary_stats(&gibbs)?,
        summary_stats(&sivi)?,
        summary_stats(&mfvi)?,
    );
    println!(
        "{:<8} {:>16} {:>16} {:>16}",
        "coef", "gibbs", "sivi", "mfvi"
    );
    for c in 0..d {
        println!(
            "beta_{c:<3} {:>8.3} ± {:<5.3} {:>8.3} ± {:<5.3} {:>8.3} ± {:<5.3}",
            sg.means[c], sg.sds[c], ss.means[c], ss.sds[c], sm.means[c], sm.sds[c]
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (name, draws) in [("gibbs", &gibbs), ("sivi", &sivi), ("mfvi", &mfvi)] {
        let p = predictive_probs(&rows(draws), &te.x)?;
        println!("{name:<6} mean held-out predictive sd {:.4}", mean(&p.sd));
    }
    Ok(())
}
