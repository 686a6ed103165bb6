//! Config-driven experiment runner behind the `sivi` binary.

pub mod config;
pub mod run;

pub use config::{
    load_config, parse_config, validate, ConditionalKind, Experiment, Issue, RawConfig, RunConfig,
    CONFIG_SCHEMA_VERSION,
};
pub use run::{
    initial_posterior, load_pairs, posthoc_draws, run, variable_names, KsEntry, MethodSummary,
    PredictiveEntry, RunReport, TraceSummary, REPORT_SCHEMA_VERSION,
};
