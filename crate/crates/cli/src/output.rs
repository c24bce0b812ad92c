use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::RunError;

/// Package version plus the source revision when the build could see one.
pub fn artifact_version() -> String {
    match option_env!("MGP_SOURCE_REVISION") {
        Some(rev) if !rev.is_empty() => format!("{}+{rev}", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RunError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct FileSchema {
    file: &'static str,
    columns: Vec<ColumnDoc>,
}

#[derive(Serialize)]
struct ColumnDoc {
    name: &'static str,
    description: &'static str,
}

fn doc(name: &'static str, description: &'static str) -> ColumnDoc {
    ColumnDoc { name, description }
}

/// `schema.json`: the columns of every CSV the runner writes.
pub fn write_schema(run_dir: &Path) -> Result<(), RunError> {
    let files = vec![
        FileSchema {
            file: "results.csv",
            columns: vec![
                doc("setup", "setup name from the config"),
                doc("rule", "rule name from the config"),
                doc("repetitions", "number of repetitions run"),
                doc("coverage", "fraction of scored repetitions whose joint credible set contains the population minimizer"),
                doc("size_median", "median over repetitions of the trace of the posterior covariance"),
                doc("marginal_coverage", "per-coordinate coverage of the equal-tailed intervals, semicolon-separated"),
                doc("winkler_median", "per-coordinate median Winkler score, semicolon-separated"),
                doc("failed_trajectories", "trajectories excluded for non-convergence or errors, summed over repetitions"),
                doc("failed_repetitions", "repetitions without a usable credible set"),
                doc("config_hash", "SHA-256 of the canonical config"),
                doc("artifact_version", "package version and source revision"),
            ],
        },
        FileSchema {
            file: "draws/<setup>__<rule>__rep<k>.csv",
            columns: vec![
                doc("trajectory", "trajectory index"),
                doc("<coordinate>", "one column per coordinate of the functional, named by design column"),
                doc("converged", "optimizer converged; false rows are excluded from summaries"),
            ],
        },
        FileSchema {
            file: "diagnostics/trace__<setup>__<rule>.csv",
            columns: vec![
                doc("step", "sample size m at the checkpoint"),
                doc("value", "L1 distance between the functional at m and at n, divided by its dimension"),
                doc("trajectory", "trajectory index, or mean for the average over trajectories"),
            ],
        },
        FileSchema {
            file: "diagnostics/acid__<setup>__<rule>.csv",
            columns: vec![
                doc("step", "context size i"),
                doc("term", "sum over classes of |E[p_{i+1}(y|x*)] - p_i(y|x*)|"),
                doc("standard_error", "Monte Carlo standard error of the expectation, summed over classes"),
                doc("cumulative", "running sum of term"),
            ],
        },
    ];
    write_json(&run_dir.join("schema.json"), &files)
}
