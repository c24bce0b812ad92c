//! Coverage studies: for every setup and rule, `R` repetitions of sample,
//! posterior draws, joint and marginal credible sets, and their scores.

use std::fs;
use std::path::{Path, PathBuf};

use mgp_core::engine::{run_mgp, EngineConfig, PosteriorDraws};
use mgp_core::exec::{map_indexed, Execution};
use mgp_core::uq::{joint_credible_set_with, marginal_interval, median, size_metric, winkler_score, Cutoff};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{artifact_version, write_json, write_schema};
use crate::setup::{prepare_all, PreparedRule, PreparedSetup, SetupRecord};
use crate::RunError;

/// Scores of one repetition's credible sets.
#[derive(Clone, Debug, PartialEq)]
pub struct RepScores {
    pub covered: bool,
    pub size: f64,
    pub marginal_covered: Vec<bool>,
    pub winkler: Vec<f64>,
}

#[derive(Clone, Debug)]
struct RepOutcome {
    scores: Option<RepScores>,
    failed_trajectories: usize,
    /// Engine-level failure, as opposed to unusable draws.
    runtime_error: Option<String>,
    draws: Option<PosteriorDraws>,
}

/// Joint set membership, size and per-coordinate interval scores of one
/// set of draws against the population minimizer.
pub fn score_draws(draws: &PosteriorDraws, theta0: &[f64], alpha: f64, cutoff: Cutoff) -> Result<RepScores, String> {
    let usable = draws.usable();
    let set = joint_credible_set_with(&usable, alpha, cutoff).map_err(|e| e.to_string())?;
    let covered = set.contains(theta0).map_err(|e| e.to_string())?;
    let size = size_metric(&usable).map_err(|e| e.to_string())?;
    let mut marginal_covered = Vec::with_capacity(theta0.len());
    let mut winkler = Vec::with_capacity(theta0.len());
    for (j, &t) in theta0.iter().enumerate() {
        let ci = marginal_interval(&usable, j, alpha).map_err(|e| e.to_string())?;
        marginal_covered.push(ci.lower <= t && t <= ci.upper);
        winkler.push(winkler_score(&ci, t, alpha));
    }
    Ok(RepScores { covered, size, marginal_covered, winkler })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub setup: String,
    pub rule: String,
    pub repetitions: usize,
    pub coverage: f64,
    pub size_median: f64,
    pub marginal_coverage: Vec<f64>,
    pub winkler_median: Vec<f64>,
    pub failed_trajectories: usize,
    pub failed_repetitions: usize,
}

pub const RESULT_COLUMNS: [&str; 11] = [
    "setup",
    "rule",
    "repetitions",
    "coverage",
    "size_median",
    "marginal_coverage",
    "winkler_median",
    "failed_trajectories",
    "failed_repetitions",
    "config_hash",
    "artifact_version",
];

fn joined(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn aggregate(setup: &PreparedSetup, rule: &str, outcomes: &[RepOutcome]) -> ResultRow {
    let scored: Vec<&RepScores> = outcomes.iter().filter_map(|o| o.scores.as_ref()).collect();
    let count = scored.len() as f64;
    let p = setup.theta0.len();
    let (coverage, marginal_coverage, winkler_median) = if scored.is_empty() {
        (f64::NAN, vec![f64::NAN; p], vec![f64::NAN; p])
    } else {
        let coverage = scored.iter().filter(|s| s.covered).count() as f64 / count;
        let marginal = (0..p)
            .map(|j| scored.iter().filter(|s| s.marginal_covered[j]).count() as f64 / count)
            .collect();
        let winkler = (0..p)
            .map(|j| median(&scored.iter().map(|s| s.winkler[j]).collect::<Vec<_>>()).unwrap_or(f64::NAN))
            .collect();
        (coverage, marginal, winkler)
    };
    let sizes: Vec<f64> = scored.iter().map(|s| s.size).collect();
    ResultRow {
        setup: setup.name.clone(),
        rule: rule.to_string(),
        repetitions: outcomes.len(),
        coverage,
        size_median: median(&sizes).unwrap_or(f64::NAN),
        marginal_coverage,
        winkler_median,
        failed_trajectories: outcomes.iter().map(|o| o.failed_trajectories).sum(),
        failed_repetitions: outcomes.len() - scored.len(),
    }
}

fn run_repetition(
    config: &ExperimentConfig,
    setup: &PreparedSetup,
    rule: &PreparedRule,
    rep: usize,
    execution: Execution,
) -> RepOutcome {
    let failed = |e: String| RepOutcome { scores: None, failed_trajectories: 0, runtime_error: Some(e), draws: None };
    let data = match setup.sample(config.seed, rep) {
        Ok(d) => d,
        Err(e) => return failed(e),
    };
    let n = data.len();
    let mut engine = EngineConfig::new(
        n + rule.steps(n),
        rule.draws.unwrap_or(config.evaluation.draws),
        setup.engine_seed(config.seed, &rule.name, rep),
    )
    .with_execution(execution);
    engine.estimator_repeats = config.evaluation.estimator_repeats;
    let mut run = match run_mgp(&data, &rule.rule, &setup.loss, &engine) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    run.draws.coordinate_names = setup.coordinate_names.clone();
    let scores = score_draws(&run.draws, &setup.theta0, config.alpha, config.evaluation.cutoff).ok();
    RepOutcome {
        scores,
        failed_trajectories: run.draws.failed(),
        runtime_error: None,
        draws: config.evaluation.save_draws.then_some(run.draws),
    }
}

#[derive(Serialize)]
struct RuleRecord<'a> {
    name: &'a str,
    rule: &'a mgp_core::rules::RuleConfig,
    draws: usize,
    steps: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: String,
    artifact_version: String,
    config_hash: String,
    workers: usize,
    setups: Vec<SetupRecord>,
    rules: Vec<RuleRecord<'a>>,
    runtime_errors: &'a [String],
    config: &'a ExperimentConfig,
}

pub struct ExperimentReport {
    pub run_dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub runtime_errors: Vec<String>,
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow], hash: &str, version: &str) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Runtime(e.to_string()))?;
    let out = (|| -> Result<(), csv::Error> {
        w.write_record(RESULT_COLUMNS)?;
        for r in rows {
            w.write_record([
                r.setup.clone(),
                r.rule.clone(),
                r.repetitions.to_string(),
                r.coverage.to_string(),
                r.size_median.to_string(),
                joined(&r.marginal_coverage),
                joined(&r.winkler_median),
                r.failed_trajectories.to_string(),
                r.failed_repetitions.to_string(),
                hash.to_string(),
                version.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    out.map_err(|e| RunError::Runtime(e.to_string()))
}

fn results_table(rows: &[ResultRow]) -> String {
    let mut out = format!("{:<20} {:<20} {:>9} {:>12} {:>8}\n", "setup", "rule", "coverage", "size_median", "failed");
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:<20} {:>9.3} {:>12.4} {:>8}\n",
            r.setup, r.rule, r.coverage, r.size_median, r.failed_trajectories
        ));
    }
    out
}

/// Runs every setup against every rule. Repetitions and trajectories run on
/// the current rayon pool; results are collected in a fixed order, so the
/// output does not depend on the number of workers.
pub fn run_experiment(config: &ExperimentConfig, out_root: &Path, workers: usize) -> Result<ExperimentReport, RunError> {
    let (setups, rules) = prepare_all(config)?;
    let hash = config.hash();
    let version = artifact_version();
    let run_dir = out_root.join(config.run_id());
    fs::create_dir_all(&run_dir)?;
    if config.evaluation.save_draws {
        fs::create_dir_all(run_dir.join("draws"))?;
    }

    let execution = Execution::default();
    let mut rows = Vec::new();
    let mut runtime_errors = Vec::new();
    for setup in &setups {
        for rule in &rules {
            let outcomes =
                map_indexed(config.repetitions, execution, |rep| run_repetition(config, setup, rule, rep, execution));
            for (rep, o) in outcomes.iter().enumerate() {
                if let Some(e) = &o.runtime_error {
                    runtime_errors.push(format!("{}/{} repetition {rep}: {e}", setup.name, rule.name));
                }
                if let Some(d) = &o.draws {
                    let file = fs::File::create(run_dir.join("draws").join(format!(
                        "{}__{}__rep{rep:03}.csv",
                        setup.name, rule.name
                    )))?;
                    d.write_csv(file).map_err(|e| RunError::Runtime(e.to_string()))?;
                }
            }
            rows.push(aggregate(setup, &rule.name, &outcomes));
        }
    }

    write_results_csv(&run_dir.join("results.csv"), &rows, &hash, &version)?;
    fs::write(run_dir.join("results.txt"), results_table(&rows))?;
    write_schema(&run_dir)?;
    let manifest = Manifest {
        run_id: config.run_id(),
        artifact_version: version,
        config_hash: hash,
        workers,
        setups: setups.iter().map(PreparedSetup::record).collect(),
        rules: rules
            .iter()
            .map(|r| RuleRecord {
                name: &r.name,
                rule: &r.rule,
                draws: r.draws.unwrap_or(config.evaluation.draws),
                steps: r.steps,
            })
            .collect(),
        runtime_errors: &runtime_errors,
        config,
    };
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentReport { run_dir, rows, runtime_errors })
}
