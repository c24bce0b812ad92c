//! Convergence and validity checks: the expected L1 distance of the
//! functional from its starting value along trajectories, the cumulative L1
//! drift of one-step-ahead predictions at a fixed query (zero for rules that
//! are conditionally identically distributed), and posterior concentration
//! across sample sizes.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{encode, DataError, Observations, ResponseValue};
use crate::dgp::SyntheticSetup;
use crate::engine::{run_mgp, EngineConfig, EngineError, Trajectory};
use crate::exec::Execution;
use crate::functionals::LossSpec;
use crate::rng::RngStream;
use crate::rules::{pick, PredictedDistribution, RuleConfig, RuleError, RuleState};

pub const DEFAULT_ACID_DRAWS: usize = 500;
pub const DEFAULT_ACID_STEPS: usize = 100;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("no trajectory has a usable checkpoint series")]
    NoTrajectories,
    #[error("rule has no evaluable categorical predictive: {0}")]
    NotEvaluable(RuleError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("sample sizes must be strictly increasing")]
    Grid,
    #[error("horizon {horizon} is before the sample size {n}")]
    Horizon { horizon: usize, n: usize },
    #[error("at least one Monte Carlo draw is required")]
    NoDraws,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1Trace {
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    /// `(trajectory index, series)` for every trajectory used in the mean.
    pub per_trajectory: Vec<(usize, Vec<f64>)>,
}

fn scaled_l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `|theta_ref - theta(F_m)|_1 / p` at every checkpoint `m`, averaged over
/// trajectories. Without a fixed reference each trajectory is compared to its
/// own first checkpoint, which suits rules whose functional at `n` is itself
/// an estimate. Failed trajectories and ones whose checkpoint grid differs
/// from the first usable trajectory are skipped.
pub fn l1_trace(trajectories: &[Trajectory], reference: Option<&[f64]>) -> Result<L1Trace, DiagnosticsError> {
    let usable: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| t.error.is_none() && !t.checkpoints.is_empty())
        .collect();
    let first = usable.first().ok_or(DiagnosticsError::NoTrajectories)?;
    let steps: Vec<usize> = first.checkpoints.iter().map(|(m, _)| *m).collect();

    let mut per_trajectory = Vec::with_capacity(usable.len());
    for t in usable {
        if t.checkpoints.len() != steps.len() || t.checkpoints.iter().zip(&steps).any(|((m, _), s)| m != s) {
            continue;
        }
        let start = reference.unwrap_or(&t.checkpoints[0].1);
        let series: Vec<f64> = t.checkpoints.iter().map(|(_, theta)| scaled_l1(start, theta)).collect();
        if series.iter().all(|v| v.is_finite()) {
            per_trajectory.push((t.index, series));
        }
    }
    if per_trajectory.is_empty() {
        return Err(DiagnosticsError::NoTrajectories);
    }
    let count = per_trajectory.len() as f64;
    let mean = (0..steps.len())
        .map(|k| per_trajectory.iter().map(|(_, s)| s[k]).sum::<f64>() / count)
        .collect();
    Ok(L1Trace { steps, mean, per_trajectory })
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Least-squares slopes of `values` against `steps` over the first and the
/// last quarter of the points. Needs at least 8 points.
pub fn quarter_slopes(steps: &[usize], values: &[f64]) -> Option<(f64, f64)> {
    let len = steps.len().min(values.len());
    if len < 8 {
        return None;
    }
    let q = len / 4;
    let xs: Vec<f64> = steps[..len].iter().map(|&s| s as f64).collect();
    Some((slope(&xs[..q], &values[..q]), slope(&xs[len - q..], &values[len - q..len])))
}

/// Columns `step, value, trajectory` with the mean series labelled `mean`.
pub fn write_trace_csv<W: Write>(writer: W, trace: &L1Trace, include_trajectories: bool) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "value", "trajectory"])?;
    for (m, v) in trace.steps.iter().zip(&trace.mean) {
        w.write_record([m.to_string(), v.to_string(), "mean".into()])?;
    }
    if include_trajectories {
        for (id, series) in &trace.per_trajectory {
            for (m, v) in trace.steps.iter().zip(series) {
                w.write_record([m.to_string(), v.to_string(), id.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcidSeries {
    /// Context sizes `i = n..=N`.
    pub steps: Vec<usize>,
    /// `sum_y |E[p_{i+1}(y|x*)] - p_i(y|x*)|` estimated by Monte Carlo.
    pub terms: Vec<f64>,
    /// Monte Carlo standard error of each term's expectation estimate,
    /// summed over classes.
    pub standard_errors: Vec<f64>,
    pub cumulative: Vec<f64>,
}

fn categorical(d: PredictedDistribution) -> Result<Vec<f64>, DiagnosticsError> {
    match d {
        PredictedDistribution::Categorical { probs } => Ok(probs),
        _ => Err(DiagnosticsError::NotEvaluable(RuleError::NotEvaluable)),
    }
}

/// Cumulative one-step drift of the predictive at a fixed query `x_star`,
/// with every future feature row set to `x_star`.
///
/// The expectation over the next response uses `draws` stratified uniforms
/// mapped through the current predictive, so each class is hit in
/// proportion to its probability; the reported standard errors are the
/// larger iid ones. The state then advances by one response drawn from the
/// current predictive.
pub fn acid_cumsum(
    rule: &RuleConfig,
    data: &Observations,
    x_star: &[f64],
    horizon: usize,
    draws: usize,
    seed: u64,
) -> Result<AcidSeries, DiagnosticsError> {
    let n = data.len();
    if horizon < n {
        return Err(DiagnosticsError::Horizon { horizon, n });
    }
    if draws == 0 {
        return Err(DiagnosticsError::NoDraws);
    }
    let mut state: RuleState = rule.init(data)?;
    let mut rng = RngStream::new(seed, 0).labelled("acid").rng();
    let mut out = AcidSeries { steps: Vec::new(), terms: Vec::new(), standard_errors: Vec::new(), cumulative: Vec::new() };
    let mut total = 0.0;

    for i in n..=horizon {
        let current = categorical(state.predict(x_star).map_err(DiagnosticsError::NotEvaluable)?)?;
        let look = state.lookahead(x_star).map_err(DiagnosticsError::NotEvaluable)?;

        let mut counts = vec![0usize; current.len()];
        for j in 0..draws {
            let u = (j as f64 + rng.random::<f64>()) / draws as f64;
            counts[pick(&current, u)] += 1;
        }
        let mut term = 0.0;
        let mut se = 0.0;
        for y in 0..current.len() {
            let expected: f64 = counts.iter().zip(&look).map(|(&c, l)| c as f64 / draws as f64 * l[y]).sum();
            term += (expected - current[y]).abs();
            let mean: f64 = current.iter().zip(&look).map(|(p, l)| p * l[y]).sum();
            let var: f64 = current.iter().zip(&look).map(|(p, l)| p * (l[y] - mean).powi(2)).sum();
            se += (var / draws as f64).sqrt();
        }
        total += term;
        out.steps.push(i);
        out.terms.push(term);
        out.standard_errors.push(se);
        out.cumulative.push(total);

        if i < horizon {
            let y = pick(&current, rng.random::<f64>());
            state.update(x_star, ResponseValue::Class(y))?;
        }
    }
    Ok(out)
}

/// Columns `step, term, standard_error, cumulative`.
pub fn write_acid_csv<W: Write>(writer: W, series: &AcidSeries) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "term", "standard_error", "cumulative"])?;
    for k in 0..series.steps.len() {
        w.write_record([
            series.steps[k].to_string(),
            series.terms[k].to_string(),
            series.standard_errors[k].to_string(),
            series.cumulative[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub draws: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Unbiased coordinate-wise sd; absent with fewer than two draws.
    pub sd: Option<Vec<f64>>,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    /// Forward steps `N - n`, the same at every `n`.
    pub steps: usize,
    pub draws: usize,
    pub seed: u64,
    pub execution: Execution,
}

/// Posterior draws at each sample size in the grid, with a fresh dataset
/// per size.
pub fn concentration_sweep(
    setup: &SyntheticSetup,
    rule: &RuleConfig,
    loss: &LossSpec,
    config: &SweepConfig,
) -> Result<Vec<SweepPoint>, DiagnosticsError> {
    if config.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DiagnosticsError::Grid);
    }
    let params = setup.standardization();
    let mut points = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let stream = RngStream::new(config.seed, n as u64);
        let data = setup.generate_n(n, &mut stream.labelled("data").rng());
        let observations = Observations::from_design(&encode(&data, &params)?);
        let engine_seed = stream.labelled("engine").rng().random::<u64>();
        let engine = EngineConfig::new(n + config.steps, config.draws, engine_seed).with_execution(config.execution);
        let run = run_mgp(&observations, rule, loss, &engine)?;
        let draws: Vec<Vec<f64>> = run.draws.usable().into_iter().map(<[f64]>::to_vec).collect();
        let dim = loss.dim();
        let count = draws.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / count).collect();
        let sd = (draws.len() >= 2).then(|| {
            (0..dim)
                .map(|j| (draws.iter().map(|d| (d[j] - mean[j]).powi(2)).sum::<f64>() / (count - 1.0)).sqrt())
                .collect()
        });
        points.push(SweepPoint { n, draws, mean, sd, failed: run.draws.failed() });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trajectory(index: usize, series: Vec<(usize, Vec<f64>)>) -> Trajectory {
        Trajectory {
            index,
            theta: series.last().unwrap().1.clone(),
            checkpoints: series,
            converged: true,
            error: None,
            generated: None,
        }
    }

    #[test]
    fn constant_offset_trace() {
        let start = vec![1.0, 2.0];
        let moved = vec![1.1, 1.7];
        let t = trajectory(0, vec![(10, start.clone()), (20, moved.clone()), (30, moved)]);
        let trace = l1_trace(&[t.clone()], Some(&start)).unwrap();
        assert_eq!(trace.steps, vec![10, 20, 30]);
        assert_eq!(trace.mean[0], 0.0);
        assert!((trace.mean[1] - 0.2).abs() < 1e-12 && (trace.mean[2] - 0.2).abs() < 1e-12);
        // own first checkpoint as reference gives the same series here
        assert_eq!(l1_trace(&[t], None).unwrap().mean, trace.mean);
    }

    #[test]
    fn failed_trajectories_are_skipped() {
        let mut bad = trajectory(1, vec![(1, vec![0.0]), (2, vec![5.0])]);
        bad.error = Some("boom".into());
        let good = trajectory(0, vec![(1, vec![0.0]), (2, vec![0.0])]);
        let trace = l1_trace(&[good, bad], None).unwrap();
        assert_eq!(trace.per_trajectory.len(), 1);
        assert_eq!(trace.mean, vec![0.0, 0.0]);
        assert!(matches!(l1_trace(&[], None), Err(DiagnosticsError::NoTrajectories)));
    }

    #[test]
    fn slopes_of_a_line() {
        let steps: Vec<usize> = (0..12).collect();
        let values: Vec<f64> = steps.iter().map(|&s| 3.0 * s as f64 + 1.0).collect();
        let (a, b) = quarter_slopes(&steps, &values).unwrap();
        assert!((a - 3.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
        assert!(quarter_slopes(&steps[..5], &values[..5]).is_none());
    }
}
