use std::collections::HashSet;
use std::path::PathBuf;

use mgp_core::data::{DatasetSchema, StratumSpec};
use mgp_core::dgp::SetupKind;
use mgp_core::functionals::DEFAULT_CONDITION_THRESHOLD;
use mgp_core::rules::mock::MockConfig;
use mgp_core::rules::RuleConfig;
use mgp_core::uq::Cutoff;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

fn invalid(message: impl Into<String>) -> ConfigError {
    ConfigError(message.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub repetitions: usize,
    pub setups: Vec<SetupConfig>,
    pub rules: Vec<RuleEntry>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of `synthetic` and `csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    #[serde(flatten)]
    pub kind: SetupKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Defaults to 20 for continuous and 100 for binary responses.
    #[serde(default)]
    pub n: Option<usize>,
    /// Fixed coefficients; drawn from the master seed when absent.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
}

fn default_dim() -> usize {
    mgp_core::dgp::DEFAULT_DIM
}

/// A CSV file treated as the population; each repetition draws a
/// stratified subset of `n` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: PathBuf,
    pub schema: DatasetSchema,
    pub n: usize,
    #[serde(default)]
    pub strata: Vec<StratumSpec>,
    #[serde(default = "default_threshold")]
    pub prune_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_CONDITION_THRESHOLD
}

/// Exactly one of `rule` and `mock`; a mock is served in-process and
/// reached through the external-service client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockConfig>,
    /// Forward steps `N - n`; the rule's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Draws `L`; the evaluation default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub cutoff: Cutoff,
    #[serde(default = "default_repeats")]
    pub estimator_repeats: usize,
    /// Write every repetition's draws under `draws/`.
    #[serde(default)]
    pub save_draws: bool,
}

fn default_draws() -> usize {
    mgp_core::engine::DEFAULT_DRAWS
}

fn default_repeats() -> usize {
    mgp_core::engine::DEFAULT_ESTIMATOR_REPEATS
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            cutoff: Cutoff::default(),
            estimator_repeats: default_repeats(),
            save_draws: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub trace: Vec<TraceConfig>,
    #[serde(default)]
    pub acid: Vec<AcidConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub setup: String,
    pub rule: String,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_trace_draws")]
    pub draws: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_trace_draws() -> usize {
    20
}

fn default_stride() -> usize {
    mgp_core::engine::DEFAULT_CHECKPOINT_STRIDE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcidConfig {
    pub setup: String,
    pub rule: String,
    #[serde(default = "default_acid_steps")]
    pub steps: usize,
    #[serde(default = "default_acid_draws")]
    pub draws: usize,
    /// Standardized query row; all zeros when absent.
    #[serde(default)]
    pub x_star: Option<Vec<f64>>,
}

fn default_acid_steps() -> usize {
    mgp_core::diagnostics::DEFAULT_ACID_STEPS
}

fn default_acid_draws() -> usize {
    mgp_core::diagnostics::DEFAULT_ACID_DRAWS
}

fn check_name(kind: &str, name: &str) -> Result<(), ConfigError> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{kind} name {name:?} must be non-empty and use only [A-Za-z0-9_.-]")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}", self.name, &self.hash()[..12])
    }

    /// Checks that do not need any data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_name("experiment", &self.name)?;
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.setups.is_empty() || self.rules.is_empty() {
            return Err(invalid("need at least one setup and one rule"));
        }
        if self.evaluation.draws < 2 {
            return Err(invalid("credible sets need at least 2 draws"));
        }
        if self.evaluation.estimator_repeats == 0 {
            return Err(invalid("estimator_repeats must be at least 1"));
        }

        let mut seen = HashSet::new();
        for s in &self.setups {
            check_name("setup", &s.name)?;
            if !seen.insert(s.name.as_str()) {
                return Err(invalid(format!("duplicate setup {:?}", s.name)));
            }
            match (&s.synthetic, &s.csv) {
                (Some(syn), None) => {
                    if syn.dim == 0 || syn.n == Some(0) {
                        return Err(invalid(format!("setup {:?}: dim and n must be positive", s.name)));
                    }
                    if let Some(beta) = &syn.beta {
                        if beta.len() != syn.dim {
                            return Err(invalid(format!("setup {:?}: beta has {} entries for dim {}", s.name, beta.len(), syn.dim)));
                        }
                    }
                }
                (None, Some(csv)) => {
                    if csv.n == 0 {
                        return Err(invalid(format!("setup {:?}: n must be positive", s.name)));
                    }
                    if !(csv.prune_threshold > 1.0) {
                        return Err(invalid(format!("setup {:?}: prune_threshold must exceed 1", s.name)));
                    }
                }
                _ => return Err(invalid(format!("setup {:?} needs exactly one of synthetic or csv", s.name))),
            }
        }

        let mut seen = HashSet::new();
        for r in &self.rules {
            check_name("rule", &r.name)?;
            if !seen.insert(r.name.as_str()) {
                return Err(invalid(format!("duplicate rule {:?}", r.name)));
            }
            if r.rule.is_some() == r.mock.is_some() {
                return Err(invalid(format!("rule {:?} needs exactly one of rule or mock", r.name)));
            }
            if r.draws.is_some_and(|l| l < 2) {
                return Err(invalid(format!("rule {:?}: at least 2 draws are needed", r.name)));
            }
        }

        let has_setup = |name: &str| self.setups.iter().any(|s| s.name == name);
        let has_rule = |name: &str| self.rules.iter().any(|r| r.name == name);
        let pairs = self
            .diagnostics
            .trace
            .iter()
            .map(|t| (&t.setup, &t.rule))
            .chain(self.diagnostics.acid.iter().map(|a| (&a.setup, &a.rule)));
        for (setup, rule) in pairs {
            if !has_setup(setup) {
                return Err(invalid(format!("diagnostic refers to unknown setup {setup:?}")));
            }
            if !has_rule(rule) {
                return Err(invalid(format!("diagnostic refers to unknown rule {rule:?}")));
            }
        }
        for t in &self.diagnostics.trace {
            if t.draws == 0 || t.stride == 0 {
                return Err(invalid("trace draws and stride must be positive"));
            }
        }
        for a in &self.diagnostics.acid {
            if a.draws == 0 {
                return Err(invalid("acid draws must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "name": "t",
                "seed": 1,
                "repetitions": 2,
                "setups": [{"name": "g", "synthetic": {"kind": "gaussian", "dim": 2, "n": 10}}],
                "rules": [{"name": "bb", "rule": {"kind": "bayesian_bootstrap"}}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = minimal();
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.evaluation.draws, 100);
        assert_eq!(c.setups[0].synthetic.as_ref().unwrap().kind, SetupKind::Gaussian { noise_sd: 1.0 });
        c.validate().unwrap();
    }

    #[test]
    fn zero_repetitions_rejected() {
        let mut c = minimal();
        c.repetitions = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"name":"t","seed":1,"repetitions":1,"setups":[],"rules":[],"bogus":1}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = minimal();
        let mut b = minimal();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rule_needs_one_source() {
        let mut c = minimal();
        c.rules[0].rule = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn diagnostics_must_reference_known_names() {
        let mut c = minimal();
        c.diagnostics.trace.push(TraceConfig { setup: "g".into(), rule: "nope".into(), steps: None, draws: 2, stride: 5 });
        assert!(c.validate().is_err());
    }
}
