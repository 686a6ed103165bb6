//! Without mixing components the surrogate bound rewards shrinking the mixer
//! to a point mass; a ramp in K keeps it spread out.
//!
//! cargo run --release --example degeneracy

use sivi::distributions::RngStream;
use sivi::models::ToyTarget;
use sivi::sivi::*;

fn mixer_sd(post: &SemiImplicitPosterior) -> sivi::Result<f64> {
    let noise = post.mixer.draw_noise(&mut RngStream::new(99), 10_000);
    let psi = post.mixer.mlp.forward(&noise)?;
    let n = psi.rows() as f64;
    let m = (0..psi.rows()).map(|i| psi.get2(i, 0)).sum::<f64>() / n;
    let v = (0..psi.rows())
        .map(|i| (psi.get2(i, 0) - m).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    Ok(v.sqrt())
}

fn main() -> sivi::Result<()> {
    let mixer = ImplicitMixer::glorot(
        10,
        &[30, 60, 30],
        1,
        NoiseKind::Gaussian,
        &mut RngStream::new(0),
    )?;
    let cond = GaussianConditional::fixed(vec![Link::Identity], 0.1)?;
    let post = SemiImplicitPosterior::new(mixer, ExplicitConditional::Gaussian(cond))?;
    let initial = mixer_sd(&post)?;
    println!("initial mixer output sd {initial:.4}");
    for schedule in [
        KSchedule::Constant { k: 0 },
        KSchedule::LinearRamp { k_max: 5 },
        KSchedule::LinearRamp { k_max: 20 },
    ] {
        let cfg = TrainConfig {
            iterations: 2000,
            k_schedule: schedule.clone(),
            ..TrainConfig::default()
        };
        let fit = train(&post, &ToyTarget::Bimodal, &cfg)?;
        let sd = mixer_sd(&fit.posterior)?;
        println!(
            "{schedule:?}: final sd {sd:.4} ({:.1}% of initial)",
            100.0 * sd / initial
        );
    }
    Ok(())
}
