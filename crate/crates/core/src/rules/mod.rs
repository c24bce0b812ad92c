//! Predictive rules: one-step-ahead conditionals `P_i` that can be sampled,
//! updated with a new observation, and in most cases evaluated.

mod bootstrap;
mod conjugate;
mod copula;
pub mod external;
pub mod mock;
mod plugin;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Observations, ResponseValue};
use crate::functionals::FitError;
use crate::rng::StreamRng;

pub use bootstrap::BootstrapState;
pub use conjugate::{BetaBernoulliState, ConjugateNormalState};
pub use copula::{alpha, BinaryCopula, ContinuousCopula, Point, DEFAULT_BANDWIDTH, INITIAL_PROB_RANGE};
pub use external::{ExternalClient, ExternalState, Task};
pub use plugin::{PluginModel, PluginState};

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule not supported here: {0}")]
    Unsupported(String),
    #[error("the Bayesian bootstrap resamples (x, y) pairs jointly; draw a pair instead")]
    PairCoupled,
    #[error("inverse-CDF bracket [{lo}, {hi}] does not contain the target {target}")]
    BracketFailure { lo: f64, hi: f64, target: f64 },
    #[error("feature row has width {got}, rule expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("response {0:?} does not match the rule's response kind")]
    ResponseKind(ResponseValue),
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("transport error: {0}")]
    Transport(#[from] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("context of {len} rows exceeds the service maximum {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("service error: {0}")]
    Remote(String),
    #[error("this rule has no evaluable predictive distribution")]
    NotEvaluable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleConfig {
    BayesianBootstrap,
    Copula {
        #[serde(default = "default_bandwidth")]
        rho: f64,
    },
    Plugin {
        model: PluginModel,
    },
    ConjugateNormal {
        prior_mean: f64,
        prior_var: f64,
        noise_var: f64,
    },
    BetaBernoulli {
        a: f64,
        b: f64,
    },
    External {
        endpoint: String,
    },
}

fn default_bandwidth() -> f64 {
    DEFAULT_BANDWIDTH
}

impl RuleConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RuleConfig::BayesianBootstrap => "bb",
            RuleConfig::Copula { .. } => "copula",
            RuleConfig::Plugin { .. } => "plugin",
            RuleConfig::ConjugateNormal { .. } => "conjugate_normal",
            RuleConfig::BetaBernoulli { .. } => "beta_bernoulli",
            RuleConfig::External { .. } => "external",
        }
    }

    /// Checks the rule against a response kind without touching data, so
    /// incompatible combinations can be rejected before any work starts.
    pub fn check_response(&self, classes: Option<usize>) -> Result<(), RuleError> {
        match (self, classes) {
            (RuleConfig::Copula { rho }, _) if !(0.0..1.0).contains(rho) => {
                Err(RuleError::Unsupported(format!("copula bandwidth {rho} outside [0, 1)")))
            }
            (RuleConfig::Copula { .. }, Some(k)) if k > 2 => {
                Err(RuleError::Unsupported(format!("copula updates do not apply to a {k}-class response")))
            }
            (RuleConfig::Plugin { model: PluginModel::GaussianLinear }, Some(_)) => {
                Err(RuleError::Unsupported("gaussian-linear plug-in needs a continuous response".into()))
            }
            (RuleConfig::Plugin { model: PluginModel::Logistic }, None) => {
                Err(RuleError::Unsupported("logistic plug-in needs a categorical response".into()))
            }
            (RuleConfig::ConjugateNormal { prior_var, noise_var, .. }, None) => {
                if *prior_var > 0.0 && *noise_var > 0.0 {
                    Ok(())
                } else {
                    Err(RuleError::Unsupported("conjugate normal variances must be positive".into()))
                }
            }
            (RuleConfig::ConjugateNormal { .. }, Some(_)) => {
                Err(RuleError::Unsupported("conjugate normal rule needs a continuous response".into()))
            }
            (RuleConfig::BetaBernoulli { a, b }, Some(2)) => {
                if *a > 0.0 && *b > 0.0 {
                    Ok(())
                } else {
                    Err(RuleError::Unsupported("beta-bernoulli pseudo-counts must be positive".into()))
                }
            }
            (RuleConfig::BetaBernoulli { .. }, _) => {
                Err(RuleError::Unsupported("beta-bernoulli rule needs a binary response".into()))
            }
            _ => Ok(()),
        }
    }

    /// Conditions the rule on every row of `data`, in order.
    pub fn init(&self, data: &Observations) -> Result<RuleState, RuleError> {
        self.check_response(data.classes())?;
        if data.is_empty() {
            return Err(RuleError::Unsupported("rules need at least one observation".into()));
        }
        Ok(match self {
            RuleConfig::BayesianBootstrap => RuleState::Bootstrap(BootstrapState::new(data.clone())),
            RuleConfig::Copula { rho } => match data.classes() {
                None => RuleState::Copula(ContinuousCopula::init(*rho, data)?),
                Some(_) => RuleState::BinaryCopula(BinaryCopula::init(*rho, data)?),
            },
            RuleConfig::Plugin { model } => RuleState::Plugin(PluginState::init(*model, data.clone())?),
            RuleConfig::ConjugateNormal { prior_mean, prior_var, noise_var } => {
                let mut state = ConjugateNormalState::new(*prior_mean, *prior_var, *noise_var);
                for &y in data.responses() {
                    state.update(y)?;
                }
                RuleState::ConjugateNormal(state)
            }
            RuleConfig::BetaBernoulli { a, b } => {
                let mut state = BetaBernoulliState::new(*a, *b);
                for &y in data.responses() {
                    state.update(y)?;
                }
                RuleState::BetaBernoulli(state)
            }
            RuleConfig::External { endpoint } => RuleState::External(ExternalState::connect(endpoint, data.clone())?),
        })
    }
}

/// One-step-ahead distribution returned by an evaluable rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PredictedDistribution {
    Categorical { probs: Vec<f64> },
    /// Piecewise-uniform density over `edges.len() - 1` bins.
    Binned { edges: Vec<f64>, probs: Vec<f64> },
    Normal { mean: f64, sd: f64 },
}

impl PredictedDistribution {
    /// Checks probabilities are non-negative and sum to one within `tolerance`
    /// and that bin edges ascend strictly.
    pub fn validate(&self, tolerance: f64) -> Result<(), RuleError> {
        let check_probs = |probs: &[f64]| {
            if probs.is_empty() {
                return Err(RuleError::Protocol("empty probability vector".into()));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(RuleError::Protocol("negative or non-finite probability".into()));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(RuleError::Protocol(format!("probabilities sum to {sum}")));
            }
            Ok(())
        };
        match self {
            PredictedDistribution::Categorical { probs } => check_probs(probs),
            PredictedDistribution::Binned { edges, probs } => {
                if edges.len() != probs.len() + 1 {
                    return Err(RuleError::Protocol(format!(
                        "{} edges for {} bins",
                        edges.len(),
                        probs.len()
                    )));
                }
                if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(RuleError::Protocol("bin edges are not strictly ascending".into()));
                }
                check_probs(probs)
            }
            PredictedDistribution::Normal { mean, sd } => {
                if mean.is_finite() && sd.is_finite() && *sd > 0.0 {
                    Ok(())
                } else {
                    Err(RuleError::Protocol("invalid normal parameters".into()))
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> ResponseValue {
        match self {
            PredictedDistribution::Categorical { probs } => ResponseValue::Class(pick(probs, rng.random())),
            PredictedDistribution::Binned { edges, probs } => {
                let k = pick(probs, rng.random());
                let t: f64 = rng.random();
                ResponseValue::Continuous(edges[k] + t * (edges[k + 1] - edges[k]))
            }
            PredictedDistribution::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                ResponseValue::Continuous(mean + sd * z)
            }
        }
    }

    /// Class probabilities, when the distribution is categorical.
    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            PredictedDistribution::Categorical { probs } => Some(probs),
            _ => None,
        }
    }
}

/// Index `k` with cumulative mass just above `u`; zero-mass categories are
/// never returned.
pub(crate) fn pick(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = k;
        acc += p;
        if target < acc {
            return k;
        }
    }
    last
}

/// Conditioning state of a rule after absorbing `step()` observations.
#[derive(Debug)]
pub enum RuleState {
    Bootstrap(BootstrapState),
    Copula(ContinuousCopula),
    BinaryCopula(BinaryCopula),
    Plugin(PluginState),
    ConjugateNormal(ConjugateNormalState),
    BetaBernoulli(BetaBernoulliState),
    External(ExternalState),
}

impl RuleState {
    pub fn name(&self) -> &'static str {
        match self {
            RuleState::Bootstrap(_) => "bb",
            RuleState::Copula(_) | RuleState::BinaryCopula(_) => "copula",
            RuleState::Plugin(_) => "plugin",
            RuleState::ConjugateNormal(_) => "conjugate_normal",
            RuleState::BetaBernoulli(_) => "beta_bernoulli",
            RuleState::External(_) => "external",
        }
    }

    /// Number of absorbed observations.
    pub fn step(&self) -> usize {
        match self {
            RuleState::Bootstrap(s) => s.step(),
            RuleState::Copula(s) => s.step(),
            RuleState::BinaryCopula(s) => s.step(),
            RuleState::Plugin(s) => s.step(),
            RuleState::ConjugateNormal(s) => s.step(),
            RuleState::BetaBernoulli(s) => s.step(),
            RuleState::External(s) => s.step(),
        }
    }

    /// Independent copy for another trajectory. External rules open a fresh
    /// connection.
    pub fn fork(&self) -> Result<RuleState, RuleError> {
        Ok(match self {
            RuleState::Bootstrap(s) => RuleState::Bootstrap(s.clone()),
            RuleState::Copula(s) => RuleState::Copula(s.clone()),
            RuleState::BinaryCopula(s) => RuleState::BinaryCopula(s.clone()),
            RuleState::Plugin(s) => RuleState::Plugin(s.clone()),
            RuleState::ConjugateNormal(s) => RuleState::ConjugateNormal(s.clone()),
            RuleState::BetaBernoulli(s) => RuleState::BetaBernoulli(s.clone()),
            RuleState::External(s) => RuleState::External(s.fork()?),
        })
    }

    /// True when the rule resamples whole pairs rather than responses at a
    /// given x.
    pub fn is_pair_coupled(&self) -> bool {
        matches!(self, RuleState::Bootstrap(_))
    }

    pub fn sample_response(&self, x: &[f64], rng: &mut StreamRng) -> Result<ResponseValue, RuleError> {
        match self {
            RuleState::Bootstrap(_) => Err(RuleError::PairCoupled),
            RuleState::Copula(s) => Ok(ResponseValue::Continuous(s.sample_bisection(Point::Free(x), rng)?)),
            RuleState::BinaryCopula(s) => {
                let p = s.prob(Point::Free(x));
                Ok(ResponseValue::Class(usize::from(rng.random::<f64>() < p)))
            }
            _ => Ok(self.predict(x)?.sample(rng)),
        }
    }

    /// Pool index of a jointly resampled pair (pair-coupled rules only).
    pub fn sample_pair(&self, rng: &mut StreamRng) -> Result<usize, RuleError> {
        match self {
            RuleState::Bootstrap(s) => Ok(s.sample_index(rng)),
            _ => Err(RuleError::Unsupported(format!("{} draws responses pointwise", self.name()))),
        }
    }

    pub fn update(&mut self, x: &[f64], y: ResponseValue) -> Result<(), RuleError> {
        match self {
            RuleState::Bootstrap(s) => s.update(x, y),
            RuleState::Copula(s) => s.update(Point::Free(x), y),
            RuleState::BinaryCopula(s) => s.update(Point::Free(x), y),
            RuleState::Plugin(s) => s.update(x, y),
            RuleState::ConjugateNormal(s) => s.update(y),
            RuleState::BetaBernoulli(s) => s.update(y),
            RuleState::External(s) => s.update(x, y),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictedDistribution, RuleError> {
        match self {
            RuleState::Bootstrap(_) | RuleState::Copula(_) => Err(RuleError::NotEvaluable),
            RuleState::BinaryCopula(s) => {
                let p = s.prob(Point::Free(x));
                Ok(PredictedDistribution::Categorical { probs: vec![1.0 - p, p] })
            }
            RuleState::Plugin(s) => s.predict(x),
            RuleState::ConjugateNormal(s) => Ok(s.predict()),
            RuleState::BetaBernoulli(s) => Ok(s.predict()),
            RuleState::External(s) => s.predict(x),
        }
    }

    /// Expected next-step probabilities at `x` after absorbing `(x, y)`, for
    /// each class `y`: the building block of the a.c.i.d. check.
    pub fn lookahead(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, RuleError> {
        let classes = match self.predict(x)? {
            PredictedDistribution::Categorical { probs } => probs.len(),
            _ => return Err(RuleError::NotEvaluable),
        };
        if let RuleState::External(s) = self {
            return s.lookahead(x, classes);
        }
        (0..classes)
            .map(|k| {
                let mut next = self.fork()?;
                next.update(x, ResponseValue::Class(k))?;
                match next.predict(x)? {
                    PredictedDistribution::Categorical { probs } => Ok(probs),
                    _ => Err(RuleError::NotEvaluable),
                }
            })
            .collect()
    }

    /// Draws a response at base row `row` (a row of the data the rule was
    /// initialized on) and absorbs it. Returns `None` when the rule keeps the
    /// response implicit, as the continuous copula does.
    pub fn forward_base(
        &mut self,
        row: usize,
        x: &[f64],
        rng: &mut StreamRng,
    ) -> Result<Option<ResponseValue>, RuleError> {
        match self {
            RuleState::Bootstrap(_) => Err(RuleError::PairCoupled),
            RuleState::Copula(s) => {
                s.absorb_uniform(Point::Base(row), rng.sample(rand::distr::Open01));
                Ok(None)
            }
            RuleState::BinaryCopula(s) => {
                let p = s.prob(Point::Base(row));
                let y = ResponseValue::Class(usize::from(rng.random::<f64>() < p));
                s.update(Point::Base(row), y)?;
                Ok(Some(y))
            }
            _ => {
                let y = self.sample_response(x, rng)?;
                self.update(x, y)?;
                Ok(Some(y))
            }
        }
    }

    /// Copula estimator pairs: for `repeats` passes over the base rows draw a
    /// response from the current predictive at each row. `None` for rules that
    /// use the augmented sample directly.
    pub fn base_resample(
        &self,
        repeats: usize,
        rng: &mut StreamRng,
    ) -> Option<Vec<(usize, ResponseValue)>> {
        match self {
            RuleState::Copula(s) => Some(s.base_resample(repeats, rng)),
            RuleState::BinaryCopula(s) => Some(s.base_resample(repeats, rng)),
            _ => None,
        }
    }

    /// Realized responses of the implicit forward steps (continuous copula),
    /// recovered by inverting each step's predictive at its recorded level.
    pub fn latent_responses(&self, from_step: usize) -> Option<Vec<f64>> {
        match self {
            RuleState::Copula(s) => Some(s.latent_responses(from_step)),
            _ => None,
        }
    }
}
