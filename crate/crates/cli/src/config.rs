//! Experiment files.
//!
//! Dynamics experiments are flat TOML documents: the simulation fields at the
//! top level plus optional `[sweep]`, `[drift_check]` and `[fixation]`
//! tables. Naming-drift runs use a separate shape with an `[nnd]` table.

use std::path::Path;

use qsg_core::protocol::{NndConfig, PolicyKind};
use qsg_core::{ChannelSpec, InitSpec, SimConfig, StopRule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Config schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

fn one() -> u64 {
    1
}

fn symmetric() -> InitSpec {
    InitSpec::Symmetric
}

fn default_early_window() -> usize {
    2
}

fn default_u_star() -> f64 {
    qsg_core::dynamics::DEFAULT_U_STAR
}

fn default_runs() -> u64 {
    6
}

fn default_snapshots() -> usize {
    6
}

fn default_max_step() -> u64 {
    700
}

fn default_samples() -> u64 {
    100_000
}

/// Swept parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    N,
    #[serde(rename = "m")]
    M,
    T,
    #[serde(rename = "h")]
    H,
    #[serde(rename = "alpha")]
    Alpha,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::N => "N",
            Axis::M => "m",
            Axis::T => "T",
            Axis::H => "h",
            Axis::Alpha => "alpha",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Axis,
    pub values: Vec<f64>,
    /// Probes used by the early drift fit.
    #[serde(default = "default_early_window")]
    pub early_window: usize,
    /// Consensus threshold when `stop` is not a threshold rule.
    #[serde(default = "default_u_star")]
    pub u_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftCheckSection {
    #[serde(default = "default_runs")]
    pub runs: u64,
    #[serde(default = "default_snapshots")]
    pub snapshots_per_run: usize,
    #[serde(default = "default_max_step")]
    pub max_step: u64,
    #[serde(default = "default_samples")]
    pub samples: u64,
}

impl Default for DriftCheckSection {
    fn default() -> Self {
        Self {
            runs: default_runs(),
            snapshots_per_run: default_snapshots(),
            max_step: default_max_step(),
            samples: default_samples(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixationSection {
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub h: Vec<f64>,
}

/// A dynamics experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub horizon: u64,
    #[serde(default = "one")]
    pub probe_every: u64,
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: u64,
    pub channel: ChannelSpec,
    #[serde(default = "symmetric")]
    pub init: InitSpec,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_check: Option<DriftCheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixation: Option<FixationSection>,
}

impl ExperimentConfig {
    pub fn sim(&self) -> SimConfig {
        SimConfig::new(self.n, self.k, self.alpha, self.channel.clone(), self.horizon, self.seed)
            .with_init(self.init.clone())
            .with_stop(self.stop)
            .with_probe_every(self.probe_every)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_schema(self.schema_version)?;
        if self.trials < 1 {
            return Err(CliError::field("trials", "must be >= 1"));
        }
        self.sim().validate().map_err(CliError::from_config)
    }
}

/// A naming-drift experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NndExperiment {
    pub schema_version: u32,
    #[serde(default = "one")]
    pub trials: u64,
    pub policy: PolicyKind,
    pub nnd: NndConfig,
}

impl NndExperiment {
    pub fn validate(&self) -> Result<(), CliError> {
        check_schema(self.schema_version)?;
        if self.trials < 1 {
            return Err(CliError::field("trials", "must be >= 1"));
        }
        if let PolicyKind::QsgBridge { alpha } = self.policy {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(CliError::field("policy.alpha", format!("must lie in (0, 1], got {alpha}")));
            }
        }
        self.nnd.validate().map_err(CliError::from_config)
    }
}

fn check_schema(version: u32) -> Result<(), CliError> {
    if version != SCHEMA_VERSION {
        return Err(CliError::field(
            "schema_version",
            format!("unsupported version {version} (this build reads {SCHEMA_VERSION})"),
        ));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_experiment(path: &Path, text: &str) -> Result<ExperimentConfig, CliError> {
    parse(path, text)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, CliError> {
    parse_experiment(path, &read(path)?)
}

pub fn load_nnd(path: &Path) -> Result<NndExperiment, CliError> {
    parse(path, &read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
N = 24
K = 10
alpha = 0.5
horizon = 100
seed = 7

[channel]
kind = "hard"
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_experiment(Path::new("x.toml"), MINIMAL).unwrap();
        assert_eq!(c.trials, 1);
        assert_eq!(c.probe_every, 1);
        assert_eq!(c.init, InitSpec::Symmetric);
        assert_eq!(c.stop, StopRule::None);
        c.validate().unwrap();
    }

    #[test]
    fn missing_field_is_named_with_its_line() {
        let text = MINIMAL.replace("alpha = 0.5\n", "");
        let err = parse_experiment(Path::new("x.toml"), &text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = format!("{MINIMAL}\n[sweep]\naxis = \"m\"\nvalues = [1.0]\nbogus = 3\n");
        let msg = parse_experiment(Path::new("x.toml"), &text).unwrap_err().to_string();
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn wrong_schema_version_fails_validation() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 9");
        let c = parse_experiment(Path::new("x.toml"), &text).unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("schema_version"), "{msg}");
    }

    #[test]
    fn nested_tables_round_trip() {
        let text = format!(
            "{MINIMAL}\n[init]\nkind = \"offset\"\ndelta = 0.01\n\n[stop]\nkind = \"threshold\"\nu_star = 0.8\n\n[fixation]\nN = [8, 16]\nh = [0.0, 0.05]\n"
        );
        let c = parse_experiment(Path::new("x.toml"), &text).unwrap();
        assert_eq!(c.init, InitSpec::Offset { delta: 0.01 });
        assert_eq!(c.stop, StopRule::Threshold { u_star: 0.8 });
        let back: ExperimentConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn axis_names_match_the_flag_spelling() {
        for (name, axis) in [("N", Axis::N), ("m", Axis::M), ("T", Axis::T), ("h", Axis::H), ("alpha", Axis::Alpha)] {
            let text = format!("{MINIMAL}\n[sweep]\naxis = \"{name}\"\nvalues = [1.0]\n");
            let c = parse_experiment(Path::new("x.toml"), &text).unwrap();
            assert_eq!(c.sweep.unwrap().axis, axis);
            assert_eq!(axis.as_str(), name);
        }
    }
}
