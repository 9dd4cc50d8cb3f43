//! Experiment configuration files.
//!
//! A config is a TOML document. Every table rejects unknown keys; omitted
//! values fall back to the `desk` or `paper` preset of the command being run.
//! Tables that a command does not read are ignored by it.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small instances that run in seconds.
    #[default]
    Desk,
    /// Problem sizes of the published experiments.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum NormChoice {
    L2,
    Linf,
}

impl From<NormChoice> for pssso_core::Norm {
    fn from(n: NormChoice) -> Self {
        match n {
            NormChoice::L2 => pssso_core::Norm::L2,
            NormChoice::Linf => pssso_core::Norm::Linf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// `alpha` at every step; `alpha = 0` means `1/L`.
    Constant { alpha: f64 },
    /// `c/(k + k0)`; `c = 0` means `1/L`.
    Decay { c: f64, k0: f64 },
    /// `alpha0/√(k + 1)`; `alpha0 = 0` means `1/L`.
    InvSqrt { alpha0: f64 },
}

impl ScheduleConfig {
    /// Concrete schedule, filling a zero leading constant with `1/L`.
    pub fn resolve(self, lipschitz: f64) -> pssso_core::StepSchedule {
        use pssso_core::StepSchedule as S;
        let or_inv_l = |v: f64| if v == 0.0 { 1.0 / lipschitz } else { v };
        match self {
            ScheduleConfig::Constant { alpha } => S::Constant { alpha: or_inv_l(alpha) },
            ScheduleConfig::Decay { c, k0 } => S::Decay { c: or_inv_l(c), k0 },
            ScheduleConfig::InvSqrt { alpha0 } => S::InvSqrt { alpha0: or_inv_l(alpha0) },
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let ok = match *self {
            ScheduleConfig::Constant { alpha } => alpha >= 0.0,
            ScheduleConfig::Decay { c, k0 } => c >= 0.0 && k0 > 0.0,
            ScheduleConfig::InvSqrt { alpha0 } => alpha0 >= 0.0,
        };
        ok.then_some(())
            .ok_or_else(|| CliError::Config(format!("invalid step schedule {self:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SaaReference {
    /// Exact population solution `soft(x̃, μ/σ₁²)`.
    ClosedForm,
    /// Solution of one oversampled instance with `surrogate_factor·max(m)` rows.
    Surrogate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub sparsity: Option<usize>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    /// Data vector of the degenerate `ℓ1` problem.
    pub b: Option<Vec<f64>>,
    /// Singular values of the degenerate nuclear-norm problem.
    pub singular_values: Option<Vec<f64>>,
    /// Ridge weights swept by `elastic-net-bound`.
    pub alpha_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub gamma: Option<f64>,
    /// Step schedule of the mini-batch runs with `s < m`.
    pub schedule: Option<ScheduleConfig>,
    pub batch_sizes: Option<Vec<usize>>,
    pub max_iter: Option<usize>,
    pub stop_tol: Option<f64>,
    /// Starting points of the degenerate `ℓ1` runs.
    pub starts: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SaaConfig {
    pub m_values: Option<Vec<usize>>,
    pub reference: Option<SaaReference>,
    pub surrogate_factor: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct UnionConfig {
    pub eps: Option<f64>,
    /// Starting point of the proximal-point trajectory.
    pub x0: Option<Vec<f64>>,
    /// Dimensions of the box-indicator instances (2 or 3).
    pub box_dims: Option<Vec<usize>>,
    pub cloud_points: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CalculusConfig {
    pub pairs: Option<usize>,
    pub monotonicity_samples: Option<usize>,
    pub max_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Command the file is written for; checked against the command line.
    pub experiment: Option<String>,
    #[serde(default)]
    pub preset: Preset,
    pub seeds: Option<Vec<u64>>,
    pub norm: Option<NormChoice>,
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_svg: bool,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub saa: SaaConfig,
    #[serde(default)]
    pub union: UnionConfig,
    #[serde(default)]
    pub calculus: CalculusConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// JSON Schema of the config file.
    pub fn schema() -> String {
        let schema = schemars::schema_for!(ExperimentConfig);
        serde_json::to_string_pretty(&schema).expect("schema serializes")
    }

    /// Canonical JSON of everything that influences results (the output
    /// directory is excluded).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub(crate) fn check_experiment(&self, command: &str) -> Result<(), CliError> {
        match &self.experiment {
            Some(e) if e != command => Err(CliError::Config(format!(
                "config is for experiment {e:?}, not {command:?}"
            ))),
            _ => Ok(()),
        }
    }

    pub(crate) fn validate_common(&self) -> Result<(), CliError> {
        if let Some(s) = &self.solver.schedule {
            s.validate()?;
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        Ok(())
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

pub(crate) fn nonnegative(name: &str, v: f64) -> Result<f64, CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

pub(crate) fn at_least(name: &str, v: usize, lo: usize) -> Result<usize, CliError> {
    if v >= lo {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be at least {lo}, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[problem]\nmm = 3").is_err());
        assert!(ExperimentConfig::from_toml("[solver.schedule]\nkind = \"constant\"\nalpha = 1\nbeta = 2").is_err());
    }

    #[test]
    fn parses_a_full_file() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            experiment = "minibatch-lasso"
            preset = "paper"
            seeds = [1, 2]
            norm = "linf"
            emit_svg = true
            [problem]
            m = 10
            sigma1 = 1.0
            [solver]
            batch_sizes = [1, 10]
            schedule = { kind = "inv_sqrt", alpha0 = 0.0 }
            [saa]
            reference = "surrogate"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.solver.schedule, Some(ScheduleConfig::InvSqrt { alpha0: 0.0 }));
        assert_eq!(cfg.saa.reference, Some(SaaReference::Surrogate));
        assert!(cfg.check_experiment("minibatch-lasso").is_ok());
        assert!(cfg.check_experiment("saa-consistency").is_err());
    }

    #[test]
    fn schema_lists_sections() {
        let s = ExperimentConfig::schema();
        for key in ["problem", "solver", "saa", "union", "calculus", "additionalProperties"] {
            assert!(s.contains(key), "{key}");
        }
    }
}
