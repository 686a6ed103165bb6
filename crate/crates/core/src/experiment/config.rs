//! Declarative run configuration: a versioned JSON document whose omitted
//! fields fall back to per-experiment defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::models::{GammaBetaPrior, ToyTarget};
use crate::sivi::{KSchedule, LrDecay, TrainConfig, XiOptimizer};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Toy,
    Nb,
    Poislog,
    Logistic,
}

/// Conditional family requested in a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalKind {
    /// Gaussian (after links) with fixed variance `sigma0_sq`.
    Fixed,
    /// Gaussian with learned diagonal covariance initialised at `sigma0_sq`.
    Diag,
    /// Gaussian with learned full covariance initialised at `sigma0_sq · I`.
    Full,
    /// Gamma × Beta, trained with the score-function estimator.
    Conjugate,
}

/// `K_t` schedule as written in a config; signed so that negative values can
/// be reported instead of failing to parse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawSchedule {
    Constant { k: i64 },
    LinearRamp { k_max: i64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub prior: Option<GammaBetaPrior>,
    /// Gaussian prior precision for logistic regression.
    pub alpha_prior: Option<f64>,
    pub target: Option<ToyTarget>,
    /// Synthetic Poisson-logarithmic data used when no dataset is given.
    pub synth_r: Option<f64>,
    pub synth_p: Option<f64>,
    pub synth_n: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSivi {
    pub noise_dim: Option<i64>,
    pub hidden: Option<Vec<i64>>,
    pub conditional: Option<ConditionalKind>,
    pub sigma0_sq: Option<f64>,
    pub k_schedule: Option<RawSchedule>,
    pub j: Option<i64>,
    pub minibatch: Option<i64>,
    pub iterations: Option<i64>,
    pub phi_lr: Option<f64>,
    /// Overall factor by which `phi_lr` decays across the run (1 = constant).
    pub phi_lr_decay: Option<f64>,
    pub xi_optimizer: Option<XiOptimizer>,
    /// Posterior draws exported after training.
    pub draws: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBaselines {
    pub gibbs: Option<bool>,
    pub mfvi_diag: Option<bool>,
    pub mfvi_full: Option<bool>,
    pub gibbs_burn_in: Option<i64>,
    pub gibbs_draws: Option<i64>,
    pub gibbs_thin: Option<i64>,
    pub mfvi_iterations: Option<i64>,
}

/// A config file exactly as written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub schema_version: Option<u32>,
    pub experiment: Experiment,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Trailing logistic rows held out for predictive checks.
    pub test_rows: Option<i64>,
    #[serde(default)]
    pub model: RawModel,
    #[serde(default)]
    pub sivi: RawSivi,
    #[serde(default)]
    pub baselines: RawBaselines,
}

/// One problem found while validating; `path` is the offending field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl Issue {
    fn field(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            message: message.into(),
            line: None,
            column: None,
        }
    }
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiviSettings {
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub conditional: ConditionalKind,
    pub sigma0_sq: f64,
    pub train: TrainConfig,
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineSettings {
    pub gibbs: bool,
    pub mfvi_diag: bool,
    pub mfvi_full: bool,
    pub gibbs_burn_in: usize,
    pub gibbs_draws: usize,
    pub gibbs_thin: usize,
    pub mfvi_iterations: usize,
}

/// A validated config with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub test_rows: Option<usize>,
    pub prior: GammaBetaPrior,
    pub alpha_prior: f64,
    pub target: Option<ToyTarget>,
    pub synth: (f64, f64, usize),
    pub sivi: SiviSettings,
    pub baselines: BaselineSettings,
}

/// Per-experiment settings used for every field a config leaves out.
struct Defaults {
    noise_dim: i64,
    hidden: &'static [i64],
    conditional: ConditionalKind,
    sigma0_sq: f64,
    schedule: RawSchedule,
    j: i64,
    iterations: i64,
    phi_lr_decay: f64,
    xi: XiOptimizer,
    draws: i64,
    gibbs: bool,
    mfvi_diag: bool,
    burn_in: i64,
    gibbs_draws: i64,
    thin: i64,
}

fn defaults(e: Experiment) -> Defaults {
    let base = Defaults {
        noise_dim: 10,
        hidden: &[30, 60, 30],
        conditional: ConditionalKind::Fixed,
        sigma0_sq: 0.1,
        schedule: RawSchedule::LinearRamp { k_max: 100 },
        j: 50,
        iterations: 5000,
        phi_lr_decay: 1.0,
        xi: XiOptimizer::default(),
        draws: 2000,
        gibbs: false,
        mfvi_diag: false,
        burn_in: 2000,
        gibbs_draws: 2000,
        thin: 50,
    };
    match e {
        Experiment::Toy => Defaults {
            iterations: 10_000,
            phi_lr_decay: 0.05,
            ..base
        },
        Experiment::Nb => Defaults {
            sigma0_sq: 0.004,
            schedule: RawSchedule::Constant { k: 1000 },
            iterations: 8000,
            phi_lr_decay: 0.01,
            gibbs: true,
            mfvi_diag: true,
            ..base
        },
        Experiment::Poislog => Defaults {
            conditional: ConditionalKind::Conjugate,
            schedule: RawSchedule::Constant { k: 200 },
            j: 100,
            iterations: 30_000,
            phi_lr_decay: 0.01,
            gibbs: true,
            ..base
        },
        Experiment::Logistic => Defaults {
            noise_dim: 50,
            hidden: &[100, 200, 100],
            conditional: ConditionalKind::Full,
            schedule: RawSchedule::Constant { k: 500 },
            iterations: 3000,
            xi: XiOptimizer::Adam { lr: 0.01 },
            draws: 5000,
            gibbs: true,
            mfvi_diag: true,
            gibbs_draws: 5000,
            thin: 5,
            ..base
        },
    }
}

/// Parses config text, reporting JSON and schema errors with their position.
pub fn parse_config(text: &str) -> Result<RawConfig, Vec<Issue>> {
    serde_json::from_str(text).map_err(|e| {
        vec![Issue {
            path: String::new(),
            message: e.to_string(),
            line: Some(e.line()),
            column: Some(e.column()),
        }]
    })
}

/// Reads, parses and validates a config file; relative dataset paths are
/// resolved against the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, Vec<Issue>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![Issue::field(
            "",
            format!("cannot read {}: {e}", path.display()),
        )]
    })?;
    let mut raw = parse_config(&text)?;
    if let (Some(d), Some(dir)) = (raw.dataset.as_mut(), path.parent()) {
        if d.is_relative() {
            *d = dir.join(&*d);
        }
    }
    validate(&raw)
}

/// Schema and cross-field checks; no computation.
pub fn validate(raw: &RawConfig) -> Result<RunConfig, Vec<Issue>> {
    let mut issues = Vec::new();
    let d = defaults(raw.experiment);

    let schema_version = raw.schema_version.unwrap_or(CONFIG_SCHEMA_VERSION);
    if schema_version != CONFIG_SCHEMA_VERSION {
        issues.push(Issue::field(
            "schema_version",
            format!("unsupported version {schema_version}, expected {CONFIG_SCHEMA_VERSION}"),
        ));
    }

    let mut count = |path: &str, v: Option<i64>, default: i64, min: i64| -> usize {
        let v = v.unwrap_or(default);
        if v < min {
            issues.push(Issue::field(
                path,
                format!("must be at least {min}, got {v}"),
            ));
            return min.max(0) as usize;
        }
        v as usize
    };

    let s = &raw.sivi;
    let noise_dim = count("sivi.noise_dim", s.noise_dim, d.noise_dim, 1);
    let j = count("sivi.j", s.j, d.j, 1);
    let iterations = count("sivi.iterations", s.iterations, d.iterations, 0);
    let draws = count("sivi.draws", s.draws, d.draws, 2);
    let hidden_raw = s.hidden.clone().unwrap_or_else(|| d.hidden.to_vec());
    let hidden: Vec<usize> = hidden_raw
        .iter()
        .enumerate()
        .map(|(i, &w)| count(&format!("sivi.hidden[{i}]"), Some(w), 1, 1))
        .collect();
    let k_schedule = match s.k_schedule.clone().unwrap_or(d.schedule) {
        RawSchedule::Constant { k } => KSchedule::Constant {
            k: count("sivi.k_schedule.k", Some(k), 0, 0),
        },
        RawSchedule::LinearRamp { k_max } => KSchedule::LinearRamp {
            k_max: count("sivi.k_schedule.k_max", Some(k_max), 0, 0),
        },
    };
    let minibatch = s.minibatch.map(|m| count("sivi.minibatch", Some(m), 1, 1));

    let b = &raw.baselines;
    let gibbs_burn_in = count("baselines.gibbs_burn_in", b.gibbs_burn_in, d.burn_in, 0);
    let gibbs_draws = count("baselines.gibbs_draws", b.gibbs_draws, d.gibbs_draws, 2);
    let gibbs_thin = count("baselines.gibbs_thin", b.gibbs_thin, d.thin, 1);
    let mfvi_iterations = count("baselines.mfvi_iterations", b.mfvi_iterations, 5000, 1);
    let test_rows = raw.test_rows.map(|t| count("test_rows", Some(t), 0, 0));
    let synth_n = count("model.synth_n", raw.model.synth_n, 100, 1);

    let positive = |v: f64| v > 0.0 && v.is_finite();
    let sigma0_sq = s.sigma0_sq.unwrap_or(d.sigma0_sq);
    if !positive(sigma0_sq) {
        issues.push(Issue::field("sivi.sigma0_sq", "must be positive"));
    }
    let phi_lr = s.phi_lr.unwrap_or(0.01);
    if !positive(phi_lr) {
        issues.push(Issue::field("sivi.phi_lr", "must be positive"));
    }
    let decay = s.phi_lr_decay.unwrap_or(d.phi_lr_decay);
    if !(positive(decay) && decay <= 1.0) {
        issues.push(Issue::field("sivi.phi_lr_decay", "must lie in (0, 1]"));
    }
    let alpha_prior = raw.model.alpha_prior.unwrap_or(0.01);
    if !positive(alpha_prior) {
        issues.push(Issue::field("model.alpha_prior", "must be positive"));
    }
    let prior = raw.model.prior.unwrap_or_default();
    if let Err(e) = prior.validate() {
        issues.push(Issue::field("model.prior", e.to_string()));
    }
    let synth_r = raw.model.synth_r.unwrap_or(2.0);
    let synth_p = raw.model.synth_p.unwrap_or(0.5);
    if !positive(synth_r) || !(synth_p > 0.0 && synth_p < 1.0) {
        issues.push(Issue::field(
            "model",
            "synth_r must be positive and synth_p in (0, 1)",
        ));
    }

    let conditional = s.conditional.unwrap_or(d.conditional);
    match (raw.experiment, conditional) {
        (Experiment::Poislog, ConditionalKind::Conjugate) => {}
        (_, ConditionalKind::Conjugate) => issues.push(Issue::field(
            "sivi.conditional",
            "the conjugate conditional is only available for experiment `poislog`",
        )),
        (Experiment::Poislog, _) => issues.push(Issue::field(
            "sivi.conditional",
            "experiment `poislog` is trained with the conjugate conditional",
        )),
        _ => {}
    }

    match raw.experiment {
        Experiment::Toy if raw.model.target.is_none() => {
            issues.push(Issue::field(
                "model.target",
                "required for experiment `toy`",
            ));
        }
        Experiment::Nb | Experiment::Logistic if raw.dataset.is_none() => {
            issues.push(Issue::field("dataset", "required for this experiment"));
        }
        _ => {}
    }
    if let Some(path) = &raw.dataset {
        if !path.is_file() {
            issues.push(Issue::field(
                "dataset",
                format!("file not found: {}", path.display()),
            ));
        }
    }
    if raw.experiment != Experiment::Logistic && raw.test_rows.is_some() {
        issues.push(Issue::field(
            "test_rows",
            "only meaningful for experiment `logistic`",
        ));
    }
    let mfvi_full = b.mfvi_full.unwrap_or(false);
    let mfvi_diag = b.mfvi_diag.unwrap_or(d.mfvi_diag);
    if mfvi_full && raw.experiment != Experiment::Logistic {
        issues.push(Issue::field(
            "baselines.mfvi_full",
            "only available for experiment `logistic`",
        ));
    }
    if mfvi_diag && !matches!(raw.experiment, Experiment::Nb | Experiment::Logistic) {
        issues.push(Issue::field(
            "baselines.mfvi_diag",
            "only available for experiments `nb` and `logistic`",
        ));
    }
    let gibbs = b.gibbs.unwrap_or(d.gibbs);
    if gibbs && raw.experiment == Experiment::Toy {
        issues.push(Issue::field(
            "baselines.gibbs",
            "toy targets are sampled exactly instead",
        ));
    }

    let train = TrainConfig {
        iterations,
        j,
        k_schedule,
        minibatch,
        phi_lr,
        phi_lr_decay: (decay < 1.0).then_some(LrDecay {
            decay,
            every: iterations.max(1) as f64,
        }),
        xi_optimizer: s.xi_optimizer.clone().unwrap_or(d.xi),
        seed: raw.seed.unwrap_or(0),
    };
    if let Err(e) = train.validate(usize::MAX) {
        issues.push(Issue::field("sivi", e.to_string()));
    }

    if !issues.is_empty() {
        return Err(issues);
    }
    Ok(RunConfig {
        schema_version,
        experiment: raw.experiment,
        seed: train.seed,
        dataset: raw.dataset.clone(),
        output_dir: raw.output_dir.clone(),
        test_rows,
        prior,
        alpha_prior,
        target: raw.model.target,
        synth: (synth_r, synth_p, synth_n),
        sivi: SiviSettings {
            noise_dim,
            hidden,
            conditional,
            sigma0_sq,
            train,
            draws,
        },
        baselines: BaselineSettings {
            gibbs,
            mfvi_diag,
            mfvi_full,
            gibbs_burn_in,
            gibbs_draws,
            gibbs_thin,
            mfvi_iterations,
        },
    })
}

impl RunConfig {
    /// Replaces the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sivi.train.seed = seed;
        self
    }
}
