//! Experiment configuration: JSON file, built-in defaults, flag overrides.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use grouppref_core::link::LinkFunction;
use grouppref_core::prefgen::Coverage;
use grouppref_core::rewardfit::FitConfig;
use grouppref_core::policy::GrpoConfig;

use crate::error::CliError;

/// Link function spec, written `logistic`, `probit`, or
/// `scaled-logistic:S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LinkSpec {
    Logistic,
    Probit,
    ScaledLogistic { scale: f64 },
}

impl LinkSpec {
    pub fn to_link(&self) -> Result<LinkFunction, CliError> {
        match self {
            LinkSpec::Logistic => Ok(LinkFunction::Logistic),
            LinkSpec::Probit => Ok(LinkFunction::Probit),
            LinkSpec::ScaledLogistic { scale } => LinkFunction::scaled_logistic(*scale)
                .map_err(|e| CliError::Usage(e.to_string())),
        }
    }
}

impl FromStr for LinkSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "logistic" => Ok(LinkSpec::Logistic),
            "probit" => Ok(LinkSpec::Probit),
            other => {
                if let Some(scale) = other.strip_prefix("scaled-logistic:") {
                    let scale: f64 = scale.parse().map_err(|_| {
                        CliError::Usage(format!("invalid scaled-logistic slope '{scale}'"))
                    })?;
                    Ok(LinkSpec::ScaledLogistic { scale })
                } else {
                    Err(CliError::Usage(format!(
                        "unknown link '{other}' (expected logistic | probit | scaled-logistic:S)"
                    )))
                }
            }
        }
    }
}

/// Pair coverage spec, written `full` or `random:p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageSpec {
    Full,
    Random { p: f64 },
}

impl CoverageSpec {
    pub fn to_coverage(&self) -> Coverage {
        match self {
            CoverageSpec::Full => Coverage::Full,
            CoverageSpec::Random { p } => Coverage::Random(*p),
        }
    }
}

impl FromStr for CoverageSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "full" => Ok(CoverageSpec::Full),
            other => {
                if let Some(p) = other.strip_prefix("random:") {
                    let p: f64 = p
                        .parse()
                        .map_err(|_| CliError::Usage(format!("invalid coverage fraction '{p}'")))?;
                    Ok(CoverageSpec::Random { p })
                } else {
                    Err(CliError::Usage(format!(
                        "unknown coverage '{other}' (expected full | random:p)"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupsConfig {
    pub count: usize,
    pub size: usize,
    /// Explicit per-group sizes; overrides `count`/`size` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
}

impl GroupsConfig {
    pub fn sizes(&self) -> Vec<usize> {
        self.sizes
            .clone()
            .unwrap_or_else(|| vec![self.size; self.count])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub l2: f64,
    pub tol: f64,
}

impl FitSettings {
    pub fn to_config(&self) -> FitConfig {
        FitConfig {
            learning_rate: self.learning_rate,
            max_iters: self.max_iters,
            l2: self.l2,
            tol: self.tol,
        }
    }
}

impl Default for FitSettings {
    fn default() -> Self {
        let c = FitConfig::default();
        Self {
            learning_rate: c.learning_rate,
            max_iters: c.max_iters,
            l2: c.l2,
            tol: c.tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSettings {
    pub alpha_reg: f64,
    pub normalize: bool,
    pub temperature: f64,
}

impl Default for AggregateSettings {
    fn default() -> Self {
        Self {
            alpha_reg: 0.5,
            normalize: true,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoSettings {
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_budget: Option<f64>,
}

impl GrpoSettings {
    pub fn to_config(&self) -> GrpoConfig {
        GrpoConfig {
            beta: self.beta,
            learning_rate: self.learning_rate,
            steps: self.steps,
            kl_budget: self.kl_budget,
        }
    }
}

impl Default for GrpoSettings {
    fn default() -> Self {
        let c = GrpoConfig::default();
        Self {
            beta: c.beta,
            learning_rate: c.learning_rate,
            steps: c.steps,
            kl_budget: c.kl_budget,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub n_eval_pairs: usize,
    pub bins: Vec<(f64, f64)>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_eval_pairs: 10_000,
            bins: grouppref_core::stats::default_margin_bins(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotSettings {
    pub n_paths: usize,
    pub alpha: f64,
    pub delta: f64,
    pub trials: u64,
}

impl Default for CotSettings {
    fn default() -> Self {
        Self {
            n_paths: 32,
            alpha: 0.3,
            delta: 0.4,
            trials: 1000,
        }
    }
}

fn default_labels_per_pair() -> u32 {
    3
}

fn default_min_humor_gap() -> f64 {
    grouppref_core::dataset::DEFAULT_MIN_HUMOR_GAP
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Everything `run-pipeline` needs. The seed is mandatory; every other
/// field has a default and every field is overridable by a flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_groups")]
    pub groups: GroupsConfig,
    #[serde(default = "default_min_humor_gap")]
    pub min_humor_gap: f64,
    #[serde(default = "default_link")]
    pub link: LinkSpec,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_coverage")]
    pub coverage: CoverageSpec,
    #[serde(default = "default_labels_per_pair")]
    pub labels_per_pair: u32,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub aggregate: AggregateSettings,
    #[serde(default)]
    pub grpo: GrpoSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub cot: CotSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_dimension() -> usize {
    8
}

fn default_groups() -> GroupsConfig {
    GroupsConfig {
        count: 5,
        size: 15,
        sizes: None,
    }
}

fn default_link() -> LinkSpec {
    LinkSpec::ScaledLogistic { scale: 20.0 }
}

fn default_coverage() -> CoverageSpec {
    CoverageSpec::Full
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dimension: default_dimension(),
            groups: default_groups(),
            min_humor_gap: default_min_humor_gap(),
            link: default_link(),
            epsilon: 0.0,
            coverage: default_coverage(),
            labels_per_pair: default_labels_per_pair(),
            fit: FitSettings::default(),
            aggregate: AggregateSettings::default(),
            grpo: GrpoSettings::default(),
            eval: EvalSettings::default(),
            cot: CotSettings::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.dimension == 0 {
            return Err(CliError::Usage("dimension must be >= 1".into()));
        }
        if self.groups.sizes().is_empty() {
            return Err(CliError::Usage("at least one group is required".into()));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(CliError::Usage(format!(
                "epsilon must be in [0, 0.5), got {}",
                self.epsilon
            )));
        }
        if self.labels_per_pair == 0 {
            return Err(CliError::Usage("labels_per_pair must be >= 1".into()));
        }
        if self.cot.trials == 0 {
            return Err(CliError::Usage("cot.trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_specs_parse_and_convert() {
        assert_eq!("logistic".parse::<LinkSpec>().unwrap(), LinkSpec::Logistic);
        assert_eq!("probit".parse::<LinkSpec>().unwrap(), LinkSpec::Probit);
        assert_eq!(
            "scaled-logistic:20".parse::<LinkSpec>().unwrap(),
            LinkSpec::ScaledLogistic { scale: 20.0 }
        );
        assert!("scaled-logistic:x".parse::<LinkSpec>().is_err());
        assert!("banana".parse::<LinkSpec>().is_err());
        assert!(LinkSpec::ScaledLogistic { scale: -1.0 }.to_link().is_err());
    }

    #[test]
    fn coverage_specs_parse() {
        assert_eq!("full".parse::<CoverageSpec>().unwrap(), CoverageSpec::Full);
        assert_eq!(
            "random:0.25".parse::<CoverageSpec>().unwrap(),
            CoverageSpec::Random { p: 0.25 }
        );
        assert!("random:".parse::<CoverageSpec>().is_err());
        assert!("sparse".parse::<CoverageSpec>().is_err());
    }

    #[test]
    fn minimal_config_file_fills_defaults() {
        let config: ExperimentConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.dimension, 8);
        assert_eq!(config.groups.sizes(), vec![15; 5]);
        assert_eq!(config.link, LinkSpec::ScaledLogistic { scale: 20.0 });
        assert!(config.validate().is_ok());

        // Seed is mandatory in config files.
        assert!(serde_json::from_str::<ExperimentConfig>("{}").is_err());
        // Unknown fields are schema violations.
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seed":1,"bogus":2}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut config = ExperimentConfig::default();
        config.epsilon = 0.5;
        assert!(config.validate().is_err());
        config.epsilon = 0.1;
        config.labels_per_pair = 0;
        assert!(config.validate().is_err());
    }
}
