//! Experiment configuration: a single JSON document, parsed and validated eagerly.

use std::path::{Path, PathBuf};

use rbsde::{
    generator_structure_check, Error as CoreError, PenaltyLevel, PenaltySchedule, ProblemData,
    ProblemSpec, SampleBox,
};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Samples used by the eager generator-structure check.
const STRUCTURE_SAMPLES: usize = 10_000;
const STRUCTURE_BOX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bsde,
    RbsdeOne,
    RbsdeTwo,
    Penalization,
    Suite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSpec {
    Levels(Vec<PenaltyLevel>),
    Geometric {
        start: f64,
        ratio: f64,
        count: usize,
        #[serde(default)]
        two_sided: bool,
    },
}

impl ScheduleSpec {
    pub fn build(&self) -> rbsde::Result<PenaltySchedule> {
        match self {
            ScheduleSpec::Levels(levels) => PenaltySchedule::new(levels.clone()),
            ScheduleSpec::Geometric {
                start,
                ratio,
                count,
                two_sided,
            } => PenaltySchedule::geometric(*start, *ratio, *count, *two_sided),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTarget {
    pub format: OutputFormat,
    pub path: PathBuf,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub mode: Mode,
    pub problem: ProblemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    /// Also solve the reflected equation and compare every level against it.
    #[serde(default, skip_serializing_if = "is_false")]
    pub oracle: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<OutputTarget>,
    /// Only drives randomized instance generation in `suite` mode.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub strict_terminal: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("config violates `{invariant}`: {message}")]
    Invariant { invariant: &'static str, message: String },
}

impl ConfigError {
    fn invariant(invariant: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Invariant {
            invariant,
            message: message.into(),
        }
    }

    /// Name of the violated invariant, if this is not a schema error.
    pub fn invariant_name(&self) -> Option<&'static str> {
        match self {
            ConfigError::Invariant { invariant, .. } => Some(invariant),
            ConfigError::Parse { .. } => None,
        }
    }
}

fn problem_error(err: CoreError) -> ConfigError {
    let name = match &err {
        CoreError::Stability { .. } => "stability",
        CoreError::InfeasibleBarriers { .. } => "barrier_order",
        CoreError::TerminalOutsideBarriers { .. } => "terminal_between_barriers",
        CoreError::Expression { .. } => "expression",
        _ => "problem_data",
    };
    ConfigError::invariant(name, format!("problem: {err}"))
}

/// Parses and fully validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_data().map(|_| ())
    }

    /// Builds the problem data after checking every config invariant.
    pub fn validate_data(&self) -> Result<ProblemData, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::invariant(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        let data = self.problem.build().map_err(problem_error)?;

        let gen = &self.problem.generator;
        let st = generator_structure_check(
            gen,
            &SampleBox::new(self.problem.horizon, STRUCTURE_BOX, STRUCTURE_BOX),
            STRUCTURE_SAMPLES,
        )
        .map_err(problem_error)?;
        if !(st.h2_ok && st.h3_ok) {
            return Err(ConfigError::invariant(
                "generator_constants",
                format!(
                    "problem.generator: declared mu = {}, lambda = {} fail on samples (worst violation {:e})",
                    gen.mu(),
                    gen.lambda(),
                    st.worst_violation
                ),
            ));
        }

        let has_lower = self.problem.lower.is_some();
        let has_upper = self.problem.upper.is_some();
        match self.mode {
            Mode::RbsdeOne if has_lower == has_upper => {
                return Err(ConfigError::invariant(
                    "mode_requirements",
                    "mode rbsde_one needs exactly one of problem.lower, problem.upper",
                ));
            }
            Mode::RbsdeTwo if !(has_lower && has_upper) => {
                return Err(ConfigError::invariant(
                    "mode_requirements",
                    "mode rbsde_two needs both problem.lower and problem.upper",
                ));
            }
            Mode::Penalization => {
                if !(has_lower || has_upper) {
                    return Err(ConfigError::invariant(
                        "mode_requirements",
                        "mode penalization needs at least one barrier",
                    ));
                }
                let Some(schedule) = &self.schedule else {
                    return Err(ConfigError::invariant("mode_requirements", "mode penalization needs a schedule"));
                };
                schedule
                    .build()
                    .map_err(|e| ConfigError::invariant("schedule", format!("schedule: {e}")))?;
            }
            _ => {}
        }

        if self.strict_terminal {
            data.check_terminal_order().map_err(problem_error)?;
        }

        for (k, out) in self.outputs.iter().enumerate() {
            check_writable(&out.path).map_err(|msg| ConfigError::invariant("output_writable", format!("outputs[{k}]: {msg}")))?;
        }
        Ok(data)
    }

    /// The validated penalty schedule, if the config has one.
    pub fn penalty_schedule(&self) -> Option<PenaltySchedule> {
        self.schedule.as_ref().and_then(|s| s.build().ok())
    }

    /// Canonical JSON form, used for hashing and round trips.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// A target is writable when its parent directory exists and it is not a directory.
pub fn check_writable(path: &Path) -> Result<(), String> {
    if path.is_dir() {
        return Err(format!("{} is a directory", path.display()));
    }
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(format!("parent directory of {} does not exist", path.display()));
    }
    let meta = std::fs::metadata(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    if meta.permissions().readonly() {
        return Err(format!("{} is read-only", parent.display()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "mode": "bsde",
        "problem": {
            "horizon": 1.0,
            "steps": 2,
            "generator": {"form": "linear", "a": 0.0, "b": 0.0},
            "terminal": {"kind": "constant", "value": 0.0}
        }
    }"#;

    #[test]
    fn minimal_bsde() {
        let spec = parse_config(MINIMAL).unwrap();
        assert_eq!(spec.mode, Mode::Bsde);
        assert_eq!(spec.schema_version, SCHEMA_VERSION);
        assert!(spec.schedule.is_none());
    }

    #[test]
    fn schema_errors_carry_path() {
        let text = MINIMAL.replace(r#""steps": 2"#, r#""steps": "two""#);
        match parse_config(&text) {
            Err(ConfigError::Parse { path, .. }) => assert_eq!(path, "problem.steps"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace(r#""mode": "bsde""#, r#""mode": "bsde", "colour": 1"#);
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn off_grid_jump() {
        let text = MINIMAL.replace(
            r#""terminal""#,
            r#""driver": {"kind": "deterministic_time", "knots": [[0.0, 0.0]], "jumps": [[0.33, 0.1]]}, "terminal""#,
        );
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("jump time") && msg.contains("off grid"), "{msg}");
        assert_eq!(err.invariant_name(), Some("problem_data"));
    }

    #[test]
    fn stability_is_named() {
        let text = MINIMAL.replace(r#""a": 0.0"#, r#""a": 3.0"#);
        assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("stability"));
    }

    #[test]
    fn crossed_barriers_are_named() {
        let text = MINIMAL.replace(
            r#""terminal""#,
            r#""lower": {"kind": "constant", "value": 1.0}, "upper": {"kind": "constant", "value": 0.0}, "terminal""#,
        );
        assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("barrier_order"));
    }

    #[test]
    fn understated_constants_rejected() {
        let text = MINIMAL.replace(r#""a": 0.0, "b": 0.0"#, r#""a": 0.4, "b": 0.0, "mu": 0.0"#);
        assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("generator_constants"));
    }

    #[test]
    fn mode_requirements() {
        for mode in ["rbsde_one", "rbsde_two", "penalization"] {
            let text = MINIMAL.replace(r#""mode": "bsde""#, &format!(r#""mode": "{mode}""#));
            assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("mode_requirements"), "{mode}");
        }
    }

    #[test]
    fn bad_schedule() {
        let text = MINIMAL.replace(
            r#""mode": "bsde""#,
            r#""mode": "penalization", "schedule": {"levels": [{"n": 10.0}, {"n": 5.0}]}"#,
        )
        .replace(r#""terminal""#, r#""lower": {"kind": "constant", "value": 0.0}, "terminal""#);
        assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("schedule"));
    }

    #[test]
    fn strict_terminal_checked_eagerly() {
        let text = MINIMAL
            .replace(r#""mode": "bsde""#, r#""mode": "rbsde_one", "strict_terminal": true"#)
            .replace(r#""terminal""#, r#""lower": {"kind": "constant", "value": 0.5}, "terminal""#);
        assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("terminal_between_barriers"));
    }

    #[test]
    fn unwritable_output() {
        let text = MINIMAL.replace(
            r#""mode": "bsde""#,
            r#""mode": "bsde", "outputs": [{"format": "csv", "path": "/nonexistent-dir/x.csv"}]"#,
        );
        assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("output_writable"));
    }

    #[test]
    fn schema_version_mismatch() {
        let text = MINIMAL.replace(r#""mode": "bsde""#, r#""mode": "bsde", "schema_version": 9"#);
        assert_eq!(parse_config(&text).unwrap_err().invariant_name(), Some("schema_version"));
    }
}
