//! Drives a full experiment from a JSON config, as the `sivi run` command
//! does, then reloads the saved posterior and draws from it again.
//!
//! cargo run --release --example run_config [config] [out_dir]

use std::path::PathBuf;

use sivi::distributions::RngStream;
use sivi::experiment::{load_config, run};
use sivi::sivi::{posterior_draws, SemiImplicitPosterior};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/configs/toy_x_shaped.json"
        ))
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sivi_run_config"));

    let cfg = match load_config(&config) {
        Ok(cfg) => cfg,
        Err(issues) => {
            for i in &issues {
                eprintln!("{}: {}", i.path, i.message);
            }
            return Err("invalid config".into());
        }
    };
    let report = run(&cfg, &out)?;
    for k in &report.ks {
        println!(
            "{} vs {} [{}]: KS {:.4} (p {:.3})",
            k.method, k.reference, k.variable, k.statistic, k.p_value
        );
    }

    let (post, seed) = SemiImplicitPosterior::load(&out.join("posterior.json"))?;
    let again = posterior_draws(&post, &mut RngStream::new(seed.unwrap_or(0) + 100), 5)?;
    println!("five fresh draws from the reloaded posterior:");
    for i in 0..again.rows() {
        println!("  {:?}", again.row(i));
    }
    println!("outputs in {}", out.display());
    Ok(())
}
