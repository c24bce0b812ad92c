//! Config-driven coverage studies and diagnostics on top of `mgp-core`.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub mod config;
pub mod diag;
pub mod experiment;
pub mod output;
pub mod setup;

use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 1 for anything wrong with the config, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Reads and validates a config file, applying a seed override first so
/// the override is part of the config hash.
pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Runs `f` on a dedicated pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| RunError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, Serialize)]
pub struct PopulationFunctional {
    pub setup: String,
    pub coordinate_names: Vec<String>,
    pub theta0: Vec<f64>,
}

/// Population minimizer of every configured setup.
pub fn population_functionals(config: &ExperimentConfig) -> Result<Vec<PopulationFunctional>, RunError> {
    config.validate()?;
    config
        .setups
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = setup::PreparedSetup::prepare(s, i, config.seed)?;
            Ok(PopulationFunctional { setup: p.name, coordinate_names: p.coordinate_names, theta0: p.theta0 })
        })
        .collect()
}
