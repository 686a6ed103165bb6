//! Executes a validated [`RunConfig`]: data, SIVI training, baselines,
//! comparisons and file export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{ConditionalKind, Experiment, RunConfig};
use crate::baselines::{
    mfvi_logistic_diag, mfvi_logistic_full, mfvi_nb, nb_gibbs, pg_gibbs, poislog_gibbs, GibbsConfig,
};
use crate::conjugate::train_conjugate;
use crate::diagnostics::{fd_histogram, ks_two_sample, summary_stats, Histogram};
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::models::data::{write_columns_csv, write_draws_csv};
use crate::models::{
    load_counts, load_logistic_csv, poislog_synth, predictive_probs, toy_target_logpdf,
    toy_target_sample, LogisticData, LogisticModel, Model, NegBinomialModel, PoissonLogModel,
    ToyTarget,
};
use crate::ndcore::Tensor;
use crate::sivi::{
    posterior_draws, train, ConjugateConditional, ExplicitConditional, Factor, GaussianConditional,
    ImplicitMixer, Link, NoiseKind, SemiImplicitPosterior, TrainOutput,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Grid resolution of the exported 2-D target density.
const CONTOUR_GRID: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KsEntry {
    pub method: String,
    pub reference: String,
    pub variable: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub draws_file: String,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub corr: Vec<Vec<f64>>,
    pub zero_variance: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictiveEntry {
    pub method: String,
    /// Mean over held-out rows of the predictive-probability sd.
    pub mean_sd: f64,
    pub row_means: Vec<f64>,
    pub row_sds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceSummary {
    /// `lower_bound` for pathwise training, `neg_lower_bound` for the conjugate estimator.
    pub quantity: String,
    pub len: usize,
    pub first_quartile_mean: Option<f64>,
    pub last_quartile_mean: Option<f64>,
    pub last: Option<f64>,
}

/// Everything a run computed. `timing` is wall-clock and is written to a
/// separate file so that `report.json` depends only on config and seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub seed: u64,
    pub variables: Vec<String>,
    pub config: RunConfig,
    pub trace: TraceSummary,
    pub ks: Vec<KsEntry>,
    pub summaries: Vec<MethodSummary>,
    pub predictive: Vec<PredictiveEntry>,
    pub files: Vec<String>,
    #[serde(skip)]
    pub timing: BTreeMap<String, f64>,
}

/// Names of the exported latent coordinates.
pub fn variable_names(experiment: Experiment, dim: usize) -> Vec<String> {
    match experiment {
        Experiment::Nb | Experiment::Poislog => vec!["r".into(), "p".into()],
        Experiment::Logistic => (0..dim).map(|i| format!("beta_{i}")).collect(),
        Experiment::Toy if dim == 1 => vec!["z".into()],
        Experiment::Toy => (1..=dim).map(|i| format!("z_{i}")).collect(),
    }
}

enum Data {
    Toy(ToyTarget),
    Nb(Vec<u64>),
    Poislog(Vec<(u64, u64)>),
    Logistic {
        train: LogisticData,
        test: LogisticData,
    },
}

fn load_data(cfg: &RunConfig) -> Result<Data> {
    let dataset = || {
        cfg.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("dataset path required".into()))
    };
    Ok(match cfg.experiment {
        Experiment::Toy => Data::Toy(
            cfg.target
                .ok_or_else(|| Error::Config("toy target required".into()))?,
        ),
        Experiment::Nb => Data::Nb(load_counts(dataset()?)?),
        Experiment::Poislog => match &cfg.dataset {
            Some(path) => Data::Poislog(load_pairs(path)?),
            None => {
                let (r, p, n) = cfg.synth;
                let mut rng = RngStream::new(cfg.seed).substream(4);
                Data::Poislog(poislog_synth(r, p, n, &mut rng)?)
            }
        },
        Experiment::Logistic => {
            let all = load_logistic_csv(dataset()?)?;
            let n = all.len();
            let test = cfg.test_rows.unwrap_or(n / 5);
            if test >= n {
                return Err(Error::Config(format!(
                    "test_rows {test} leaves no training rows out of {n}"
                )));
            }
            let train_idx: Vec<usize> = (0..n - test).collect();
            let test_idx: Vec<usize> = (n - test..n).collect();
            Data::Logistic {
                train: all.subset(&train_idx),
                test: all.subset(&test_idx),
            }
        }
    })
}

/// Reads `(n, l)` pairs from a CSV with columns `n` and `l`.
pub fn load_pairs(path: &Path) -> Result<Vec<(u64, u64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Dataset(format!("missing column `{name}`")))
    };
    let (ni, li) = (col("n")?, col("l")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| {
            rec.get(i)
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| Error::Dataset(format!("row {}: bad count", row + 1)))
        };
        let (n, l) = (parse(ni)?, parse(li)?);
        if l > n {
            return Err(Error::Dataset(format!(
                "row {}: l = {l} exceeds n = {n}",
                row + 1
            )));
        }
        out.push((n, l));
    }
    if out.is_empty() {
        return Err(Error::Dataset("no pairs".into()));
    }
    Ok(out)
}

fn links(cfg: &RunConfig, dim: usize) -> Vec<Link> {
    match cfg.experiment {
        Experiment::Nb | Experiment::Poislog => vec![Link::Exp, Link::Logistic],
        Experiment::Toy if cfg.target == Some(ToyTarget::Gamma) => vec![Link::Exp],
        _ => vec![Link::Identity; dim],
    }
}

/// Untrained posterior for `cfg`, its mixer initialised from the run seed.
pub fn initial_posterior(cfg: &RunConfig, dim: usize) -> Result<SemiImplicitPosterior> {
    let s = &cfg.sivi;
    let conditional = match s.conditional {
        ConditionalKind::Conjugate => {
            ExplicitConditional::Conjugate(ConjugateConditional::new(vec![
                Factor::Gamma,
                Factor::Beta,
            ])?)
        }
        ConditionalKind::Fixed => {
            ExplicitConditional::Gaussian(GaussianConditional::fixed(links(cfg, dim), s.sigma0_sq)?)
        }
        ConditionalKind::Diag => {
            ExplicitConditional::Gaussian(GaussianConditional::diag(links(cfg, dim), s.sigma0_sq)?)
        }
        ConditionalKind::Full => {
            ExplicitConditional::Gaussian(GaussianConditional::full(links(cfg, dim), s.sigma0_sq)?)
        }
    };
    let mut rng = RngStream::new(cfg.seed);
    let mixer = ImplicitMixer::glorot(
        s.noise_dim,
        &s.hidden,
        conditional.psi_dim(),
        NoiseKind::Gaussian,
        &mut rng,
    )?;
    SemiImplicitPosterior::new(mixer, conditional)
}

fn gibbs_config(cfg: &RunConfig) -> GibbsConfig {
    let b = &cfg.baselines;
    GibbsConfig {
        burn_in: b.gibbs_burn_in,
        draws: b.gibbs_draws,
        thin: b.gibbs_thin,
        seed: cfg.seed,
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn column(t: &Tensor, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|i| t.get2(i, c)).collect()
}

fn write_trace(path: &Path, quantity: &str, trace: &[f64], k_trace: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "k", quantity])?;
    for (i, v) in trace.iter().enumerate() {
        let k = k_trace.get(i).map_or(String::new(), |k| k.to_string());
        w.write_record([i.to_string(), k, format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lower", "upper", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([
            format!("{:e}", h.edges[i]),
            format!("{:e}", h.edges[i + 1]),
            c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn quarter_means(trace: &[f64]) -> (Option<f64>, Option<f64>) {
    let q = trace.len() / 4;
    if q == 0 {
        return (None, None);
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (
        Some(mean(&trace[..q])),
        Some(mean(&trace[trace.len() - q..])),
    )
}

/// Log density of a 2-D toy target on a grid spanning its draws.
fn write_contour(path: &Path, target: ToyTarget, draws: &Tensor) -> Result<()> {
    let span = |c: usize| {
        let mut v = column(draws, c);
        v.sort_by(f64::total_cmp);
        let lo = crate::diagnostics::quantile_sorted(&v, 0.005);
        let hi = crate::diagnostics::quantile_sorted(&v, 0.995);
        let pad = 0.1 * (hi - lo);
        (lo - pad, hi + pad)
    };
    let ((x0, x1), (y0, y1)) = (span(0), span(1));
    let step = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (CONTOUR_GRID - 1) as f64;
    let (mut xs, mut ys, mut ls) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..CONTOUR_GRID {
        for j in 0..CONTOUR_GRID {
            let z = [step(x0, x1, i), step(y0, y1, j)];
            xs.push(z[0]);
            ys.push(z[1]);
            ls.push(toy_target_logpdf(target, &z));
        }
    }
    write_columns_csv(path, &[("z_1", &xs), ("z_2", &ys), ("log_density", &ls)])
}

struct Exporter<'a> {
    out: &'a Path,
    files: Vec<String>,
}

impl Exporter<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }
}

/// Runs the experiment and writes its outputs into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let mut ex = Exporter {
        out,
        files: Vec::new(),
    };
    let mut timing = BTreeMap::new();
    let data = load_data(cfg)?;

    let dim = match &data {
        Data::Toy(t) => t.dim(),
        Data::Nb(_) | Data::Poislog(_) => 2,
        Data::Logistic { train, .. } => train.x.cols(),
    };
    let names = variable_names(cfg.experiment, dim);
    let post = initial_posterior(cfg, dim)?;

    let clock = Instant::now();
    let trained = match &data {
        Data::Toy(t) => train(&post, t, &cfg.sivi.train),
        Data::Nb(counts) => train(
            &post,
            &NegBinomialModel::new(counts.clone(), cfg.prior)?,
            &cfg.sivi.train,
        ),
        Data::Poislog(pairs) => train_conjugate(
            &post,
            &PoissonLogModel::new(pairs.clone(), cfg.prior)?,
            &cfg.sivi.train,
        ),
        Data::Logistic { train: d, .. } => train(
            &post,
            &LogisticModel::new(d.x.clone(), d.y.clone(), cfg.alpha_prior)?,
            &cfg.sivi.train,
        ),
    };
    timing.insert("sivi_train".to_string(), clock.elapsed().as_secs_f64());

    let quantity = if cfg.sivi.conditional == ConditionalKind::Conjugate {
        "neg_lower_bound"
    } else {
        "lower_bound"
    };
    let TrainOutput {
        posterior,
        trace,
        k_trace,
    } = match trained {
        Ok(o) => o,
        Err(Error::NanBound { iteration, trace }) => {
            // keep what was recorded before the failure
            write_trace(&ex.path("trace.csv"), quantity, &trace, &[])?;
            return Err(Error::NanBound { iteration, trace });
        }
        Err(e) => return Err(e),
    };
    write_trace(&ex.path("trace.csv"), quantity, &trace, &k_trace)?;
    posterior.save(&ex.path("posterior.json"), Some(cfg.seed))?;

    let seeds = RngStream::new(cfg.seed);
    let mut methods: Vec<(String, Tensor)> = Vec::new();
    methods.push((
        "sivi".into(),
        posterior_draws(&posterior, &mut seeds.substream(1), cfg.sivi.draws)?,
    ));

    let clock = Instant::now();
    let reference = match &data {
        Data::Toy(t) => {
            let mut rng = seeds.substream(3);
            let flat: Vec<f64> = (0..cfg.sivi.draws)
                .flat_map(|_| toy_target_sample(*t, &mut rng))
                .collect();
            Some((
                "target".to_string(),
                Tensor::matrix(cfg.sivi.draws, dim, flat)?,
            ))
        }
        _ if !cfg.baselines.gibbs => None,
        Data::Nb(counts) => Some((
            "gibbs".into(),
            nb_gibbs(counts, &cfg.prior, &gibbs_config(cfg))?,
        )),
        Data::Poislog(pairs) => Some((
            "gibbs".into(),
            poislog_gibbs(pairs, &cfg.prior, &gibbs_config(cfg))?,
        )),
        Data::Logistic { train, .. } => Some((
            "gibbs".into(),
            pg_gibbs(&train.x, &train.y, cfg.alpha_prior, &gibbs_config(cfg))?,
        )),
    };
    if reference.is_some() {
        timing.insert("reference".to_string(), clock.elapsed().as_secs_f64());
    }

    let clock = Instant::now();
    let n_mf = cfg.sivi.draws;
    match &data {
        Data::Nb(counts) if cfg.baselines.mfvi_diag => {
            let mf = mfvi_nb(counts, &cfg.prior, cfg.baselines.mfvi_iterations)?;
            let post = mf.posterior(cfg.sivi.noise_dim)?;
            methods.push((
                "mfvi_diag".into(),
                posterior_draws(&post, &mut seeds.substream(2), n_mf)?,
            ));
        }
        Data::Logistic { train, .. } => {
            if cfg.baselines.mfvi_diag {
                let mf = mfvi_logistic_diag(
                    &train.x,
                    &train.y,
                    cfg.alpha_prior,
                    cfg.baselines.mfvi_iterations,
                )?;
                methods.push(("mfvi_diag".into(), mf.draws(&mut seeds.substream(2), n_mf)?));
            }
            if cfg.baselines.mfvi_full {
                let mf = mfvi_logistic_full(
                    &train.x,
                    &train.y,
                    cfg.alpha_prior,
                    cfg.baselines.mfvi_iterations,
                )?;
                methods.push(("mfvi_full".into(), mf.draws(&mut seeds.substream(5), n_mf)?));
            }
        }
        _ => {}
    }
    timing.insert("mfvi".to_string(), clock.elapsed().as_secs_f64());

    let mut ks = Vec::new();
    if let Some((ref_name, ref_draws)) = &reference {
        for (method, draws) in &methods {
            for (c, var) in names.iter().enumerate() {
                let r = ks_two_sample(&column(draws, c), &column(ref_draws, c))?;
                ks.push(KsEntry {
                    method: method.clone(),
                    reference: ref_name.clone(),
                    variable: var.clone(),
                    statistic: r.statistic,
                    p_value: r.p_value,
                    n1: r.n1,
                    n2: r.n2,
                });
            }
        }
    }
    if let Some(r) = reference {
        methods.push(r);
    }

    let mut summaries = Vec::new();
    for (method, draws) in &methods {
        let file = format!("draws_{method}.csv");
        write_draws_csv(ex.path(&file), &names, &rows(draws))?;
        let s = summary_stats(draws)?;
        summaries.push(MethodSummary {
            method: method.clone(),
            draws_file: file,
            means: s.means,
            sds: s.sds,
            corr: s.corr,
            zero_variance: s.zero_variance,
        });
        for (c, var) in names.iter().enumerate() {
            let h = fd_histogram(&column(draws, c))?;
            write_histogram(&ex.path(&format!("hist_{method}_{var}.csv")), &h)?;
        }
    }
    if let (Data::Toy(t), Some((_, target))) = (&data, methods.iter().find(|m| m.0 == "target")) {
        if dim == 2 {
            write_contour(&ex.path("contour_target.csv"), *t, target)?;
        }
    }

    let mut predictive = Vec::new();
    if let Data::Logistic { test, .. } = &data {
        if !test.is_empty() {
            for (method, draws) in &methods {
                let p = predictive_probs(&rows(draws), &test.x)?;
                predictive.push(PredictiveEntry {
                    method: method.clone(),
                    mean_sd: p.sd.iter().sum::<f64>() / p.sd.len() as f64,
                    row_means: p.mean,
                    row_sds: p.sd,
                });
            }
        }
    }

    let (first_quartile_mean, last_quartile_mean) = quarter_means(&trace);
    ex.files.push("report.json".into());
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        experiment: cfg.experiment,
        seed: cfg.seed,
        variables: names,
        config: cfg.clone(),
        trace: TraceSummary {
            quantity: quantity.into(),
            len: trace.len(),
            first_quartile_mean,
            last_quartile_mean,
            last: trace.last().copied(),
        },
        ks,
        summaries,
        predictive,
        files: ex.files.clone(),
        timing,
    };
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(
        out.join("timing.json"),
        serde_json::to_string_pretty(&report.timing)?,
    )?;
    Ok(report)
}

/// Draws `count` fresh samples from the posterior saved by a previous run.
pub fn posthoc_draws(cfg: &RunConfig, run_dir: &Path, count: usize, seed: u64) -> Result<PathBuf> {
    let (post, _) = SemiImplicitPosterior::load(&run_dir.join("posterior.json"))?;
    let names = variable_names(cfg.experiment, post.dim());
    let draws = posterior_draws(&post, &mut RngStream::new(seed).substream(6), count)?;
    let path = run_dir.join(format!("draws_posthoc_seed{seed}.csv"));
    write_draws_csv(&path, &names, &rows(&draws))?;
    Ok(path)
}
