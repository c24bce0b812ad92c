//! Materialized setups and rules: populations loaded, coefficients drawn,
//! identifiability masks and population minimizers computed, mock services
//! started.

use mgp_core::data::{
    encode, fit_standardization, load_csv, stratified_split, ColumnKind, Dataset, Observations, StandardizationParams,
    StratumSpec,
};
use mgp_core::dgp::{SetupKind, SyntheticSetup};
use mgp_core::engine::default_depth;
use mgp_core::functionals::{prune_collinear, LossSpec};
use mgp_core::rng::RngStream;
use mgp_core::rules::mock::{MockBehavior, MockServer};
use mgp_core::rules::RuleConfig;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, RuleEntry, SetupConfig};

#[derive(Debug)]
pub enum Source {
    Synthetic(SyntheticSetup),
    Population { data: Dataset, n: usize, strata: Vec<StratumSpec> },
}

#[derive(Debug)]
pub struct PreparedSetup {
    pub name: String,
    pub index: usize,
    pub source: Source,
    pub params: StandardizationParams,
    pub loss: LossSpec,
    pub theta0: Vec<f64>,
    pub coordinate_names: Vec<String>,
    pub classes: Option<usize>,
}

/// What the manifest records about a setup.
#[derive(Clone, Debug, Serialize)]
pub struct SetupRecord {
    pub name: String,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    pub coordinate_names: Vec<String>,
    pub theta0: Vec<f64>,
    pub dropped_columns: Vec<String>,
}

fn setup_stream(seed: u64, index: usize) -> RngStream {
    RngStream::new(seed, index as u64)
}

impl PreparedSetup {
    pub fn prepare(config: &SetupConfig, index: usize, seed: u64) -> Result<Self, ConfigError> {
        let fail = |e: String| ConfigError(format!("setup {:?}: {e}", config.name));
        let stream = setup_stream(seed, index);
        if let Some(syn) = &config.synthetic {
            let n = syn.n.unwrap_or_else(|| syn.kind.default_n());
            let setup = match &syn.beta {
                Some(beta) => SyntheticSetup::with_beta(syn.kind.clone(), beta.clone(), n),
                None => SyntheticSetup::new(syn.kind.clone(), syn.dim, n, &mut stream.labelled("beta").rng()),
            }
            .map_err(|e| fail(e.to_string()))?;
            let params = setup.standardization();
            let width = params.design_width();
            let classes = syn.kind.is_binary().then_some(2);
            let loss = match classes {
                Some(k) => LossSpec::multinomial(width, k),
                None => LossSpec::squared_error(width),
            };
            let theta0 = setup
                .population_theta(&loss, &mut stream.labelled("population").rng())
                .map_err(|e| fail(e.to_string()))?;
            let coordinate_names = loss.coordinate_names(&params.column_names());
            return Ok(Self {
                name: config.name.clone(),
                index,
                source: Source::Synthetic(setup),
                params,
                loss,
                theta0,
                coordinate_names,
                classes,
            });
        }

        let csv = config.csv.as_ref().ok_or_else(|| fail("no data source".into()))?;
        let data = load_csv(&csv.path, &csv.schema).map_err(|e| fail(e.to_string()))?;
        if csv.n > data.n() {
            return Err(fail(format!("n = {} exceeds the {} population rows", csv.n, data.n())));
        }
        let params = fit_standardization(&data).map_err(|e| fail(e.to_string()))?;
        let design = encode(&data, &params).map_err(|e| fail(e.to_string()))?;
        let classes = match &data.response_column().kind {
            ColumnKind::Categorical { levels } => Some(levels.len()),
            ColumnKind::Continuous => None,
        };
        // identifiability is fixed once, on the population
        let mask = prune_collinear(&design.x, csv.prune_threshold).map_err(|e| fail(e.to_string()))?;
        let loss = match classes {
            Some(k) => LossSpec::multinomial(design.width(), k),
            None => LossSpec::squared_error(design.width()),
        }
        .with_mask(mask);
        let theta0 = loss.fit(&design.x, &design.y).map_err(|e| fail(e.to_string()))?.theta;
        let coordinate_names = loss.coordinate_names(&params.column_names());
        Ok(Self {
            name: config.name.clone(),
            index,
            source: Source::Population { data, n: csv.n, strata: csv.strata.clone() },
            params,
            loss,
            theta0,
            coordinate_names,
            classes,
        })
    }

    pub fn n(&self) -> usize {
        match &self.source {
            Source::Synthetic(s) => s.n,
            Source::Population { n, .. } => *n,
        }
    }

    /// Observed sample of repetition `rep`; shared by every rule.
    pub fn sample(&self, seed: u64, rep: usize) -> Result<Observations, String> {
        let mut rng = setup_stream(seed, self.index).labelled("data").substream(rep as u64).rng();
        let data = match &self.source {
            Source::Synthetic(s) => s.generate(&mut rng),
            Source::Population { data, n, strata } => {
                stratified_split(data, *n, strata, &mut rng).map_err(|e| e.to_string())?
            }
        };
        let design = encode(&data, &self.params).map_err(|e| e.to_string())?;
        Ok(Observations::from_design(&design))
    }

    /// Seed of the engine run for `rule` at repetition `rep`, independent of
    /// which other rules are configured.
    pub fn engine_seed(&self, seed: u64, rule: &str, rep: usize) -> u64 {
        use rand::Rng;
        setup_stream(seed, self.index).labelled(&format!("rule/{rule}")).substream(rep as u64).rng().random()
    }

    pub fn record(&self) -> SetupRecord {
        let names = self.params.column_names();
        SetupRecord {
            name: self.name.clone(),
            n: self.n(),
            beta: match &self.source {
                Source::Synthetic(s) => Some(s.beta.clone()),
                Source::Population { .. } => None,
            },
            coordinate_names: self.coordinate_names.clone(),
            theta0: self.theta0.clone(),
            dropped_columns: self
                .loss
                .mask
                .iter()
                .zip(&names)
                .filter(|(keep, _)| !**keep)
                .map(|(_, name)| name.clone())
                .collect(),
        }
    }

    pub fn kind(&self) -> Option<&SetupKind> {
        match &self.source {
            Source::Synthetic(s) => Some(&s.kind),
            Source::Population { .. } => None,
        }
    }
}

/// A rule ready to run; mock services live as long as this value.
pub struct PreparedRule {
    pub name: String,
    pub rule: RuleConfig,
    pub steps: Option<usize>,
    pub draws: Option<usize>,
    _server: Option<MockServer>,
}

impl PreparedRule {
    pub fn prepare(entry: &RuleEntry) -> Result<Self, ConfigError> {
        let (rule, server) = match (&entry.rule, &entry.mock) {
            (Some(rule), None) => (rule.clone(), None),
            (None, Some(mock)) => {
                let server = MockServer::spawn(mock.clone())
                    .map_err(|e| ConfigError(format!("rule {:?}: cannot start mock service: {e}", entry.name)))?;
                (RuleConfig::External { endpoint: server.endpoint() }, Some(server))
            }
            _ => return Err(ConfigError(format!("rule {:?} needs exactly one of rule or mock", entry.name))),
        };
        Ok(Self { name: entry.name.clone(), rule, steps: entry.steps, draws: entry.draws, _server: server })
    }

    /// Forward steps for a sample of size `n`.
    pub fn steps(&self, n: usize) -> usize {
        self.steps.unwrap_or_else(|| default_depth(&self.rule, n) - n)
    }
}

/// Response kind a mock behavior serves: `Some(true)` classification,
/// `Some(false)` regression, `None` either (malformed test behaviors).
fn mock_serves_classes(behavior: &MockBehavior) -> Option<bool> {
    match behavior {
        MockBehavior::Constant { .. } | MockBehavior::Drifting | MockBehavior::BetaBernoulli { .. } => Some(true),
        MockBehavior::GaussianGrid { .. } => Some(false),
        MockBehavior::MalformedSum | MockBehavior::MalformedEdges => None,
    }
}

/// Rejects rule and setup combinations that cannot run, before any compute.
pub fn check_compatibility(
    config: &ExperimentConfig,
    setups: &[PreparedSetup],
) -> Result<(), ConfigError> {
    for s in setups {
        for r in &config.rules {
            if let Some(rule) = &r.rule {
                rule.check_response(s.classes)
                    .map_err(|e| ConfigError(format!("rule {:?} on setup {:?}: {e}", r.name, s.name)))?;
            }
            if let Some(mock) = &r.mock {
                if let Some(classes) = mock_serves_classes(&mock.behavior) {
                    if classes != s.classes.is_some() {
                        return Err(ConfigError(format!(
                            "mock rule {:?} does not serve the response of setup {:?}",
                            r.name, s.name
                        )));
                    }
                }
            }
        }
    }
    for a in &config.diagnostics.acid {
        let s = setups.iter().find(|s| s.name == a.setup).expect("validated name");
        if s.classes.is_none() {
            return Err(ConfigError(format!("acid diagnostic needs a categorical response; setup {:?} is continuous", s.name)));
        }
        if let Some(x) = &a.x_star {
            if x.len() != s.params.design_width() - 1 {
                return Err(ConfigError(format!(
                    "x_star has {} entries; setup {:?} has {} features",
                    x.len(),
                    s.name,
                    s.params.design_width() - 1
                )));
            }
        }
    }
    Ok(())
}

pub fn prepare_all(config: &ExperimentConfig) -> Result<(Vec<PreparedSetup>, Vec<PreparedRule>), ConfigError> {
    config.validate()?;
    let setups = config
        .setups
        .iter()
        .enumerate()
        .map(|(i, s)| PreparedSetup::prepare(s, i, config.seed))
        .collect::<Result<Vec<_>, _>>()?;
    check_compatibility(config, &setups)?;
    let rules = config.rules.iter().map(PreparedRule::prepare).collect::<Result<Vec<_>, _>>()?;
    Ok((setups, rules))
}
