//! Experiment configuration files (TOML) and their validation.
//!
//! Unknown keys are rejected; the error names the key and the closest valid
//! one. A run manifest (JSON) embeds the resolved configuration and can be
//! loaded in place of the original file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariate::{Atom, CovariateSpec, Distribution};
use crate::error::{Error, Result};
use crate::inference::{ResponseModel, TestSpec};
use crate::procedures::ProcedureConfig;
use crate::selection_bias::Guesser;

/// One covariate as written in a config file. Cutpoints are on the original
/// (uncentred) scale; an empty list keeps the covariate out of randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateConfig {
    Discrete {
        /// `(value, probability)` pairs.
        levels: Vec<(f64, f64)>,
        #[serde(default)]
        cutpoints: Vec<f64>,
    },
    Uniform {
        lo: f64,
        hi: f64,
        #[serde(default)]
        cutpoints: Vec<f64>,
    },
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        cutpoints: Vec<f64>,
    },
}

impl CovariateConfig {
    pub fn build(&self) -> Result<CovariateSpec> {
        match self {
            CovariateConfig::Discrete { levels, cutpoints } => CovariateSpec::new(
                Distribution::Discrete { levels: levels.iter().map(|&(value, prob)| Atom { value, prob }).collect() },
                cutpoints.clone(),
            ),
            CovariateConfig::Uniform { lo, hi, cutpoints } => CovariateSpec::uniform(*lo, *hi, cutpoints.clone()),
            CovariateConfig::Normal { mean, sd, cutpoints } => CovariateSpec::normal(*mean, *sd, cutpoints.clone()),
        }
    }
}

/// A procedure with an optional display label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub procedure: ProcedureConfig,
}

impl ProcedureEntry {
    pub fn new(label: &str, procedure: ProcedureConfig) -> Self {
        ProcedureEntry { label: Some(label.to_string()), procedure }
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.procedure.kind_name().to_string())
    }
}

/// Which inference quantities are computed at the `n_grid` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceLevel {
    /// Imbalance and selection bias only.
    None,
    /// Adds the OLS t-test and its rejection rate.
    Test,
    /// Adds conditional power and the loss-of-power ratio.
    #[default]
    Power,
}

fn default_replications() -> u64 {
    1000
}

fn default_guessers() -> Vec<Guesser> {
    vec![Guesser::Optimal]
}

fn default_workers() -> usize {
    1
}

/// The full experiment definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed of every random stream.
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u64,
    /// Trial sizes at which results are summarized.
    pub n_grid: Vec<u64>,
    /// Extra trajectory points (imbalance and selection bias only).
    #[serde(default)]
    pub snapshot_points: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub inference: InferenceLevel,
    #[serde(default = "default_guessers")]
    pub guessers: Vec<Guesser>,
    #[serde(default)]
    pub covariates: Vec<CovariateConfig>,
    pub model: ResponseModel,
    #[serde(default)]
    pub test: TestSpec,
    pub procedures: Vec<ProcedureEntry>,
}

impl ExperimentConfig {
    /// Structural checks that do not need the covariate moments.
    pub fn validate(&self) -> Result<()> {
        if self.procedures.is_empty() {
            return Err(Error::Config("no procedures given".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_grid[0] == 0 {
            return Err(Error::Config("n_grid must be strictly ascending and positive".into()));
        }
        let max_n = *self.n_grid.last().unwrap();
        if let Some(s) = self.snapshot_points.iter().find(|&&s| s == 0 || s > max_n) {
            return Err(Error::Config(format!("snapshot point {s} outside [1, {max_n}]")));
        }
        self.model.validate(self.covariates.len())?;
        self.test.validate()?;
        for g in &self.guessers {
            g.validate(self.covariates.len())?;
        }
        let mut names: Vec<String> = self.procedures.iter().map(|p| p.name()).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("procedure name `{}` is used twice; add distinct labels", w[0])));
        }
        Ok(())
    }

    /// All points where trajectories are summarized: `n_grid ∪ snapshot_points`.
    pub fn eval_points(&self) -> Vec<u64> {
        let mut pts: Vec<u64> = self.n_grid.iter().chain(&self.snapshot_points).copied().collect();
        pts.sort_unstable();
        pts.dedup();
        pts
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(describe_toml_error(&e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the `config` member of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct ManifestConfig {
                config: ExperimentConfig,
            }
            let m: ManifestConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), with_suggestion(&e.to_string()))))?;
            m.config.validate()?;
            Ok(m.config)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

fn describe_toml_error(e: &toml::de::Error) -> String {
    let msg = e.message();
    let location = match e.span() {
        Some(span) => format!(" (at byte {})", span.start),
        None => String::new(),
    };
    format!("{}{location}", with_suggestion(msg))
}

/// Appends "did you mean" to serde's unknown-field / unknown-variant messages.
fn with_suggestion(msg: &str) -> String {
    let Some((key, expected)) = parse_unknown(msg) else {
        return msg.to_string();
    };
    match nearest(&key, &expected) {
        Some(best) => format!("{msg}; did you mean `{best}`?"),
        None => msg.to_string(),
    }
}

fn parse_unknown(msg: &str) -> Option<(String, Vec<String>)> {
    let rest = msg.strip_prefix("unknown field `").or_else(|| msg.strip_prefix("unknown variant `"))?;
    let end = rest.find('`')?;
    let key = rest[..end].to_string();
    let tail = &rest[end + 1..];
    let expected: Vec<String> = tail.split('`').skip(1).step_by(2).map(|s| s.to_string()).collect();
    Some((key, expected))
}

/// Closest candidate by normalized Levenshtein similarity.
pub fn nearest(key: &str, candidates: &[String]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::normalized_levenshtein(key, c), c))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(score, _)| *score > 0.0)
        .map(|(_, c)| c.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 7
replications = 10
n_grid = [20, 40]

[model]
mu1 = 1.0
mu2 = 0.0
beta = [1.0]
sigma_eps = 1.0

[[covariates]]
kind = "discrete"
levels = [[-1, 0.5], [1, 0.5]]
cutpoints = [0]

[[procedures]]
kind = "pocock_simon"
p = 0.75

[[procedures]]
label = "fam"
kind = "family"
weights = { margins = [1.0] }
allocation = { kind = "scaled", base = "linear", gamma = 0.5 }
"#;

    #[test]
    fn parses_basic_config() {
        let cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        assert_eq!(cfg.procedures.len(), 2);
        assert_eq!(cfg.procedures[0].name(), "pocock_simon");
        assert_eq!(cfg.procedures[1].name(), "fam");
        assert_eq!(cfg.test, TestSpec::default());
        assert_eq!(cfg.inference, InferenceLevel::Power);
        let spec = cfg.covariates[0].build().unwrap();
        assert_eq!(spec.num_levels(), 2);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let bad = BASIC.replace("replications = 10", "replicatons = 10");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("replicatons") && err.contains("did you mean `replications`"), "{err}");
        let bad = BASIC.replace("p = 0.75", "pp = 0.75");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("pp") && err.contains("did you mean `p`"), "{err}");
    }

    #[test]
    fn empty_procedure_list_is_a_config_error() {
        let mut cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        cfg.procedures.clear();
        assert!(cfg.validate().unwrap_err().is_config());
    }
}
