//! Config-driven experiments over the `rbsde` solvers.
//!
//! A config names a problem, a mode (`bsde`, `rbsde_one`, `rbsde_two`,
//! `penalization` or `suite`) and optional outputs. [`run_experiment`] turns a
//! parsed config into a [`Report`], which [`emit_report`] writes as JSON and/or
//! CSV.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{parse_config, ConfigError, ExperimentSpec, Mode, OutputFormat, OutputTarget, ScheduleSpec};
pub use experiment::{config_hash, run_batch, run_experiment};
pub use report::{emit_report, to_csv, to_json, write_atomic, Report};

/// Configs shipped with the binary, by name.
pub const BENCHMARKS: [(&str, &str); 3] = [
    ("american_put", include_str!("../configs/american_put.json")),
    ("dynkin_toy", include_str!("../configs/dynkin_toy.json")),
    ("monotone_cubic", include_str!("../configs/monotone_cubic.json")),
];

/// Parses a bundled benchmark config.
pub fn benchmark(name: &str) -> Option<Result<ExperimentSpec, ConfigError>> {
    BENCHMARKS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_config(text))
}
