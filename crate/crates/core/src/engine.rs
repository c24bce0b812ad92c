//! Predictive resampling: `L` independent trajectories, each extending the
//! observed rows to depth `N` by drawing a feature row from the growing pool
//! and a response from the rule, followed by the risk minimizer of the
//! augmented sample.
//!
//! Every trajectory owns the RNG stream keyed by its index, so results are
//! identical however the trajectories are scheduled.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Observations, ResponseValue};
use crate::exec::{map_indexed, Execution};
use crate::functionals::{FitError, FitResult, LossSpec};
use crate::rng::{RngStream, StreamRng};
use crate::rules::{RuleConfig, RuleError, RuleState};

pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_EXTERNAL_STEPS: usize = 500;
pub const DEFAULT_DRAWS: usize = 100;
pub const DEFAULT_CHECKPOINT_STRIDE: usize = 25;
/// Passes over the observed rows in the copula estimator.
pub const DEFAULT_ESTIMATOR_REPEATS: usize = 5;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("depth {depth} must be at least the sample size {n}")]
    Depth { depth: usize, n: usize },
    #[error("at least one draw is required")]
    NoDraws,
    #[error("rule initialization failed: {0}")]
    Rule(#[from] RuleError),
    #[error("functional does not match the data: {0}")]
    Functional(String),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Final sample size `N`, including the observed rows.
    pub depth: usize,
    pub draws: usize,
    /// Steps at which to evaluate the functional; `depth` is always added.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub estimator_repeats: usize,
    /// Keep generated pairs for dumping.
    #[serde(default)]
    pub keep_pairs: bool,
    #[serde(default)]
    pub execution: Execution,
}

fn default_repeats() -> usize {
    DEFAULT_ESTIMATOR_REPEATS
}

impl EngineConfig {
    pub fn new(depth: usize, draws: usize, seed: u64) -> Self {
        Self {
            depth,
            draws,
            checkpoints: Vec::new(),
            seed,
            estimator_repeats: DEFAULT_ESTIMATOR_REPEATS,
            keep_pairs: false,
            execution: Execution::default(),
        }
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<usize>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

/// Default depth: 2000 forward steps, 500 for external services.
pub fn default_depth(rule: &RuleConfig, n: usize) -> usize {
    match rule {
        RuleConfig::External { .. } => n + DEFAULT_EXTERNAL_STEPS,
        _ => n + DEFAULT_STEPS,
    }
}

/// `n, n + stride, ...` up to and including `depth`.
pub fn checkpoint_grid(n: usize, depth: usize, stride: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (n..depth).step_by(stride.max(1)).collect();
    grid.push(depth);
    grid
}

/// What the engine needs from a predictive rule.
pub trait ForwardSampler: Sized + Sync {
    fn name(&self) -> &'static str;

    /// Independent copy for one trajectory.
    fn fork(&self) -> Result<Self, RuleError>;

    fn is_pair_coupled(&self) -> bool {
        false
    }

    /// Pool index of a jointly resampled pair.
    fn sample_pair(&self, _rng: &mut StreamRng) -> Result<usize, RuleError> {
        Err(RuleError::Unsupported(format!("{} draws responses pointwise", self.name())))
    }

    fn update(&mut self, x: &[f64], y: ResponseValue) -> Result<(), RuleError>;

    /// Draws and absorbs a response at observed row `row`; `None` when the
    /// response stays implicit.
    fn forward_base(
        &mut self,
        row: usize,
        x: &[f64],
        rng: &mut StreamRng,
    ) -> Result<Option<ResponseValue>, RuleError>;

    /// Estimator pairs drawn from the current predictive at the observed
    /// rows, for rules whose functional is not taken on the augmented sample.
    fn base_resample(&self, _repeats: usize, _rng: &mut StreamRng) -> Option<Vec<(usize, ResponseValue)>> {
        None
    }

    fn latent_responses(&self, _from: usize) -> Option<Vec<f64>> {
        None
    }
}

impl ForwardSampler for RuleState {
    fn name(&self) -> &'static str {
        RuleState::name(self)
    }

    fn fork(&self) -> Result<Self, RuleError> {
        RuleState::fork(self)
    }

    fn is_pair_coupled(&self) -> bool {
        RuleState::is_pair_coupled(self)
    }

    fn sample_pair(&self, rng: &mut StreamRng) -> Result<usize, RuleError> {
        RuleState::sample_pair(self, rng)
    }

    fn update(&mut self, x: &[f64], y: ResponseValue) -> Result<(), RuleError> {
        RuleState::update(self, x, y)
    }

    fn forward_base(
        &mut self,
        row: usize,
        x: &[f64],
        rng: &mut StreamRng,
    ) -> Result<Option<ResponseValue>, RuleError> {
        RuleState::forward_base(self, row, x, rng)
    }

    fn base_resample(&self, repeats: usize, rng: &mut StreamRng) -> Option<Vec<(usize, ResponseValue)>> {
        RuleState::base_resample(self, repeats, rng)
    }

    fn latent_responses(&self, from: usize) -> Option<Vec<f64>> {
        RuleState::latent_responses(self, from)
    }
}

/// Uniform index into a pool of `len` rows.
pub fn feature_pool_sample(len: usize, rng: &mut StreamRng) -> usize {
    rng.random_range(0..len)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub index: usize,
    /// `(m, theta(F_m))`, strictly increasing in `m`, ending at the depth.
    pub checkpoints: Vec<(usize, Vec<f64>)>,
    pub theta: Vec<f64>,
    pub converged: bool,
    pub error: Option<String>,
    /// Generated `(observed row, response)` pairs, when requested.
    pub generated: Option<Vec<(usize, ResponseValue)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub rule: String,
    pub n: usize,
    pub depth: usize,
    pub seed: u64,
    pub coordinate_names: Vec<String>,
    /// One row per trajectory; failed rows may hold non-finite values.
    pub draws: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

impl PosteriorDraws {
    pub fn dim(&self) -> usize {
        self.coordinate_names.len()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn failed(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    /// Draws from converged trajectories only, the input to every summary.
    pub fn usable(&self) -> Vec<&[f64]> {
        self.draws
            .iter()
            .zip(&self.converged)
            .filter(|(_, c)| **c)
            .map(|(d, _)| d.as_slice())
            .collect()
    }

    /// Columns `trajectory, <coordinates>..., converged`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["trajectory".to_string()];
        header.extend(self.coordinate_names.iter().cloned());
        header.push("converged".into());
        w.write_record(&header)?;
        for (l, (row, ok)) in self.draws.iter().zip(&self.converged).enumerate() {
            let mut record = vec![l.to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(ok.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgpRun {
    pub draws: PosteriorDraws,
    pub trajectories: Vec<Trajectory>,
}

/// Initializes `rule` on `data` and runs predictive resampling.
pub fn run_mgp(
    data: &Observations,
    rule: &RuleConfig,
    loss: &LossSpec,
    config: &EngineConfig,
) -> Result<MgpRun, EngineError> {
    check(data, loss, config)?;
    let prototype = rule.init(data)?;
    run_with(data, &prototype, loss, config)
}

fn check(data: &Observations, loss: &LossSpec, config: &EngineConfig) -> Result<(), EngineError> {
    if config.depth < data.len() {
        return Err(EngineError::Depth { depth: config.depth, n: data.len() });
    }
    if config.draws == 0 {
        return Err(EngineError::NoDraws);
    }
    if loss.mask.len() != data.width() + 1 {
        return Err(EngineError::Functional(format!(
            "mask covers {} columns, data has {} plus the intercept",
            loss.mask.len(),
            data.width()
        )));
    }
    Ok(())
}

/// Runs predictive resampling from an already-initialized rule.
pub fn run_with<R: ForwardSampler>(
    data: &Observations,
    prototype: &R,
    loss: &LossSpec,
    config: &EngineConfig,
) -> Result<MgpRun, EngineError> {
    check(data, loss, config)?;
    let n = data.len();
    let mut checkpoints: Vec<usize> =
        config.checkpoints.iter().copied().filter(|&m| m >= n && m < config.depth).collect();
    checkpoints.push(config.depth);
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let trajectories = map_indexed(config.draws, config.execution, |l| {
        run_trajectory(l, data, prototype, loss, config, &checkpoints)
    });

    let dim = loss.dim();
    let draws = PosteriorDraws {
        rule: prototype.name().to_string(),
        n,
        depth: config.depth,
        seed: config.seed,
        coordinate_names: (0..dim).map(|j| format!("theta_{j}")).collect(),
        draws: trajectories.iter().map(|t| t.theta.clone()).collect(),
        converged: trajectories.iter().map(|t| t.converged).collect(),
    };
    Ok(MgpRun { draws, trajectories })
}

fn fit_pairs(
    data: &Observations,
    loss: &LossSpec,
    pairs: &[(usize, ResponseValue)],
    warm: Option<&[f64]>,
) -> Result<FitResult, FitError> {
    let width = data.width();
    let mut features = Vec::with_capacity(pairs.len() * width);
    let mut responses = Vec::with_capacity(pairs.len());
    for &(row, y) in pairs {
        features.extend_from_slice(data.row(row));
        responses.push(y);
    }
    loss.fit_rows(&features, width, &responses, warm)
}

fn run_trajectory<R: ForwardSampler>(
    index: usize,
    data: &Observations,
    prototype: &R,
    loss: &LossSpec,
    config: &EngineConfig,
    checkpoints: &[usize],
) -> Trajectory {
    let mut trajectory = Trajectory {
        index,
        checkpoints: Vec::with_capacity(checkpoints.len()),
        theta: vec![f64::NAN; loss.dim()],
        converged: false,
        error: None,
        generated: None,
    };
    if let Err(e) = forward(index, data, prototype, loss, config, checkpoints, &mut trajectory) {
        trajectory.error = Some(e);
        trajectory.converged = false;
    }
    trajectory
}

fn forward<R: ForwardSampler>(
    index: usize,
    data: &Observations,
    prototype: &R,
    loss: &LossSpec,
    config: &EngineConfig,
    checkpoints: &[usize],
    out: &mut Trajectory,
) -> Result<(), String> {
    let n = data.len();
    let stream = RngStream::new(config.seed, index as u64);
    let mut rng = stream.rng();
    // the same estimator draws at every checkpoint keep the trace smooth
    let estimator_stream = stream.labelled("estimator");

    let mut state = prototype.fork().map_err(|e| e.to_string())?;
    let mut sources: Vec<usize> = Vec::with_capacity(config.depth);
    sources.extend(0..n);
    let mut augmented = Observations::with_capacity(data.width(), data.classes(), config.depth);
    for i in 0..n {
        augmented.push(data.row(i), data.response(i));
    }
    let mut implicit = false;
    let mut warm: Option<Vec<f64>> = None;
    let mut next_checkpoint = 0;

    for m in n..=config.depth {
        if m > n {
            let (row, y) = if state.is_pair_coupled() {
                let slot = state.sample_pair(&mut rng).map_err(|e| e.to_string())?;
                let y = augmented.response(slot);
                let row = sources[slot];
                state.update(data.row(row), y).map_err(|e| e.to_string())?;
                (row, Some(y))
            } else {
                let row = sources[feature_pool_sample(sources.len(), &mut rng)];
                let y = state.forward_base(row, data.row(row), &mut rng).map_err(|e| e.to_string())?;
                (row, y)
            };
            sources.push(row);
            match y {
                Some(y) if !implicit => augmented.push(data.row(row), y),
                _ => implicit = true,
            }
        }
        if checkpoints.get(next_checkpoint) == Some(&m) {
            next_checkpoint += 1;
            let fit = match state.base_resample(config.estimator_repeats, &mut estimator_stream.rng()) {
                Some(pairs) => fit_pairs(data, loss, &pairs, warm.as_deref()),
                None if !implicit => {
                    loss.fit_rows(augmented.features(), data.width(), augmented.responses(), warm.as_deref())
                }
                None => return Err("rule keeps responses implicit but offers no estimator".into()),
            }
            .map_err(|e| e.to_string())?;
            warm = Some(fit.theta.clone());
            out.checkpoints.push((m, fit.theta.clone()));
            if m == config.depth {
                out.converged = fit.converged && fit.theta.iter().all(|v| v.is_finite());
                out.theta = fit.theta;
            }
        }
    }

    if config.keep_pairs {
        let generated: Vec<ResponseValue> = if implicit {
            state
                .latent_responses(n)
                .ok_or("implicit responses cannot be recovered")?
                .into_iter()
                .map(ResponseValue::Continuous)
                .collect()
        } else {
            augmented.responses()[n..].to_vec()
        };
        out.generated = Some(sources[n..].iter().copied().zip(generated).collect());
    }
    Ok(())
}

/// Columns `trajectory, step, x_1..x_d, y` for every generated pair.
pub fn write_trajectories_csv<W: Write>(
    writer: W,
    data: &Observations,
    trajectories: &[Trajectory],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["trajectory".to_string(), "step".to_string()];
    header.extend((1..=data.width()).map(|k| format!("x_{k}")));
    header.push("y".into());
    w.write_record(&header)?;
    let n = data.len();
    for t in trajectories {
        let Some(pairs) = &t.generated else { continue };
        for (i, (row, y)) in pairs.iter().enumerate() {
            let mut record = vec![t.index.to_string(), (n + i + 1).to_string()];
            record.extend(data.row(*row).iter().map(|v| v.to_string()));
            record.push(match y {
                ResponseValue::Continuous(v) => v.to_string(),
                ResponseValue::Class(k) => k.to_string(),
            });
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}
