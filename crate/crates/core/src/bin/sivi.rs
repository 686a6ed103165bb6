use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sivi::experiment::{load_config, posthoc_draws, run, Issue, RunConfig};

#[derive(Parser)]
#[command(version, about = "Semi-implicit variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train SIVI and the enabled baselines, then write draws, traces and a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running anything; prints issues as JSON.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample again from the posterior saved by a previous `run`.
    Draws {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of the earlier run.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
}

fn load(path: &Path) -> Result<RunConfig, ExitCode> {
    load_config(path).map_err(|issues| {
        report_issues(&issues);
        ExitCode::from(2)
    })
}

fn report_issues(issues: &[Issue]) {
    for i in issues {
        eprintln!("error: {i}");
    }
    println!("{}", serde_json::json!({ "ok": false, "issues": issues }));
}

fn out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("sivi_out"))
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => {
            return match load(&config) {
                Ok(_) => {
                    println!("{}", serde_json::json!({ "ok": true, "issues": [] }));
                    ExitCode::SUCCESS
                }
                Err(code) => code,
            };
        }
        Command::Run { config, seed, out } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let cfg = match seed {
                Some(s) => cfg.with_seed(s),
                None => cfg,
            };
            let dir = out_dir(&cfg, out);
            run(&cfg, &dir).map(|report| {
                for k in &report.ks {
                    println!(
                        "KS {} vs {} [{}]: D = {:.4}, p = {:.3}",
                        k.method, k.reference, k.variable, k.statistic, k.p_value
                    );
                }
                println!("wrote {}", dir.display());
            })
        }
        Command::Draws {
            config,
            seed,
            out,
            count,
        } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let dir = out_dir(&cfg, out);
            posthoc_draws(
                &cfg,
                &dir,
                count.unwrap_or(cfg.sivi.draws),
                seed.unwrap_or(cfg.seed),
            )
            .map(|p| println!("wrote {}", p.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
