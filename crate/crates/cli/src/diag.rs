//! Diagnostics runs: L1 traces of the functional along trajectories and
//! cumulative one-step predictive drift at a fixed query.

use std::fs;
use std::path::{Path, PathBuf};

use mgp_core::diagnostics::{acid_cumsum, l1_trace, quarter_slopes, write_acid_csv, write_trace_csv, AcidSeries, L1Trace};
use mgp_core::engine::{checkpoint_grid, run_mgp, EngineConfig};
use mgp_core::exec::Execution;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{artifact_version, write_json, write_schema};
use crate::setup::{prepare_all, PreparedRule, PreparedSetup};
use crate::RunError;

pub struct TraceOutput {
    pub setup: String,
    pub rule: String,
    pub trace: L1Trace,
    pub path: PathBuf,
}

pub struct AcidOutput {
    pub setup: String,
    pub rule: String,
    pub series: AcidSeries,
    pub path: PathBuf,
}

pub struct DiagnosticsReport {
    pub run_dir: PathBuf,
    pub traces: Vec<TraceOutput>,
    pub acid: Vec<AcidOutput>,
}

#[derive(Serialize)]
struct TraceSummary {
    setup: String,
    rule: String,
    steps: usize,
    trajectories: usize,
    first_quarter_slope: Option<f64>,
    last_quarter_slope: Option<f64>,
}

#[derive(Serialize)]
struct AcidSummary {
    setup: String,
    rule: String,
    horizon: usize,
    draws: usize,
    final_cumulative: Option<f64>,
}

#[derive(Serialize)]
struct DiagnosticsManifest<'a> {
    run_id: String,
    artifact_version: String,
    config_hash: String,
    traces: Vec<TraceSummary>,
    acid: Vec<AcidSummary>,
    config: &'a ExperimentConfig,
}

fn find<'a>(setups: &'a [PreparedSetup], rules: &'a [PreparedRule], setup: &str, rule: &str) -> (&'a PreparedSetup, &'a PreparedRule) {
    (
        setups.iter().find(|s| s.name == setup).expect("validated setup"),
        rules.iter().find(|r| r.name == rule).expect("validated rule"),
    )
}

pub fn run_diagnostics(config: &ExperimentConfig, out_root: &Path) -> Result<DiagnosticsReport, RunError> {
    let (setups, rules) = prepare_all(config)?;
    let run_dir = out_root.join(config.run_id());
    let dir = run_dir.join("diagnostics");
    fs::create_dir_all(&dir)?;
    let runtime = |e: String| RunError::Runtime(e);

    let mut traces = Vec::new();
    let mut trace_summaries = Vec::new();
    for tc in &config.diagnostics.trace {
        let (setup, rule) = find(&setups, &rules, &tc.setup, &tc.rule);
        let data = setup.sample(config.seed, 0).map_err(runtime)?;
        let n = data.len();
        let steps = tc.steps.unwrap_or_else(|| rule.steps(n));
        let engine = EngineConfig::new(n + steps, tc.draws, setup.engine_seed(config.seed, &format!("trace/{}", rule.name), 0))
            .with_checkpoints(checkpoint_grid(n, n + steps, tc.stride))
            .with_execution(Execution::default());
        let run = run_mgp(&data, &rule.rule, &setup.loss, &engine).map_err(|e| runtime(e.to_string()))?;
        let trace = l1_trace(&run.trajectories, None).map_err(|e| runtime(e.to_string()))?;
        let path = dir.join(format!("trace__{}__{}.csv", setup.name, rule.name));
        write_trace_csv(fs::File::create(&path)?, &trace, true).map_err(|e| runtime(e.to_string()))?;
        let slopes = quarter_slopes(&trace.steps, &trace.mean);
        trace_summaries.push(TraceSummary {
            setup: setup.name.clone(),
            rule: rule.name.clone(),
            steps,
            trajectories: trace.per_trajectory.len(),
            first_quarter_slope: slopes.map(|s| s.0),
            last_quarter_slope: slopes.map(|s| s.1),
        });
        traces.push(TraceOutput { setup: setup.name.clone(), rule: rule.name.clone(), trace, path });
    }

    let mut acid = Vec::new();
    let mut acid_summaries = Vec::new();
    for ac in &config.diagnostics.acid {
        let (setup, rule) = find(&setups, &rules, &ac.setup, &ac.rule);
        let data = setup.sample(config.seed, 0).map_err(runtime)?;
        let n = data.len();
        let x_star = ac.x_star.clone().unwrap_or_else(|| vec![0.0; data.width()]);
        let seed = setup.engine_seed(config.seed, &format!("acid/{}", rule.name), 0);
        let series =
            acid_cumsum(&rule.rule, &data, &x_star, n + ac.steps, ac.draws, seed).map_err(|e| runtime(e.to_string()))?;
        let path = dir.join(format!("acid__{}__{}.csv", setup.name, rule.name));
        write_acid_csv(fs::File::create(&path)?, &series).map_err(|e| runtime(e.to_string()))?;
        acid_summaries.push(AcidSummary {
            setup: setup.name.clone(),
            rule: rule.name.clone(),
            horizon: n + ac.steps,
            draws: ac.draws,
            final_cumulative: series.cumulative.last().copied(),
        });
        acid.push(AcidOutput { setup: setup.name.clone(), rule: rule.name.clone(), series, path });
    }

    write_schema(&run_dir)?;
    let manifest = DiagnosticsManifest {
        run_id: config.run_id(),
        artifact_version: artifact_version(),
        config_hash: config.hash(),
        traces: trace_summaries,
        acid: acid_summaries,
        config,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(DiagnosticsReport { run_dir, traces, acid })
}
