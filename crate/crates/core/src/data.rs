//! Tabular data model: schema-checked datasets, CSV ingestion, population
//! standardization, one-hot design encoding and stratified subsampling.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("row {row}, column `{column}`: non-finite value")]
    NonFinite { row: usize, column: String },
    #[error("column `{column}`: unknown categorical level {level:?}")]
    UnknownLevel { column: String, level: String },
    #[error("column `{0}` has zero population variance")]
    ZeroVariance(String),
    #[error("dataset is empty")]
    Empty,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("stratum {stratum} has {available} rows but {requested} were allocated")]
    StratumTooSmall { stratum: String, available: usize, requested: usize },
    #[error("requested {requested} rows from a dataset of {available}")]
    SubsetTooLarge { requested: usize, available: usize },
}

/// Column declaration used when reading a file. `levels: None` infers the
/// level set from the data in first-appearance order; `Some` closes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnDecl {
    Continuous,
    Categorical {
        #[serde(default)]
        levels: Option<Vec<String>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub decl: ColumnDecl,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self { name: name.into(), decl: ColumnDecl::Continuous }
    }

    pub fn categorical(name: impl Into<String>, levels: Option<Vec<String>>) -> Self {
        Self { name: name.into(), decl: ColumnDecl::Categorical { levels } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub features: Vec<ColumnSpec>,
    pub response: ColumnSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Continuous(f64),
    /// Index into the column's level list.
    Categorical(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ResponseValue {
    Continuous(f64),
    Class(usize),
}

impl ResponseValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            ResponseValue::Continuous(v) => v,
            ResponseValue::Class(k) => k as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub features: Vec<FeatureValue>,
    pub response: ResponseValue,
}

/// Observed data `z_{1:n}`: feature rows with a response, plus the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Column>,
    response: Column,
    rows: Vec<Row>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, response: Column, rows: Vec<Row>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        for (r, row) in rows.iter().enumerate() {
            if row.features.len() != columns.len() {
                return Err(DataError::Invalid(format!(
                    "row {r} has {} features, schema has {}",
                    row.features.len(),
                    columns.len()
                )));
            }
            for (col, value) in columns.iter().zip(&row.features) {
                match (&col.kind, value) {
                    (ColumnKind::Continuous, FeatureValue::Continuous(v)) if v.is_finite() => {}
                    (ColumnKind::Categorical { levels }, FeatureValue::Categorical(k)) if *k < levels.len() => {}
                    _ => {
                        return Err(DataError::Invalid(format!(
                            "row {r}: value {value:?} does not fit column `{}`",
                            col.name
                        )))
                    }
                }
            }
            match (&response.kind, row.response) {
                (ColumnKind::Continuous, ResponseValue::Continuous(v)) if v.is_finite() => {}
                (ColumnKind::Categorical { levels }, ResponseValue::Class(k)) if k < levels.len() => {}
                (_, value) => {
                    return Err(DataError::Invalid(format!("row {r}: response {value:?} does not fit schema")))
                }
            }
        }
        Ok(Self { columns, response, rows })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn response_column(&self) -> &Column {
        &self.response
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of response classes, or `None` for a continuous response.
    pub fn classes(&self) -> Option<usize> {
        match &self.response.kind {
            ColumnKind::Continuous => None,
            ColumnKind::Categorical { levels } => Some(levels.len()),
        }
    }

    /// Rows at `indices`, in the given order, with the schema unchanged.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            response: self.response.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

fn resolve_levels(
    spec: &ColumnSpec,
    seen: &mut Vec<String>,
    lookup: &mut HashMap<String, usize>,
    raw: &str,
) -> Result<usize, DataError> {
    if let Some(&k) = lookup.get(raw) {
        return Ok(k);
    }
    match &spec.decl {
        ColumnDecl::Categorical { levels: Some(_) } => {
            Err(DataError::UnknownLevel { column: spec.name.clone(), level: raw.to_string() })
        }
        _ => {
            seen.push(raw.to_string());
            lookup.insert(raw.to_string(), seen.len() - 1);
            Ok(seen.len() - 1)
        }
    }
}

struct LevelTracker {
    levels: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl LevelTracker {
    fn new(spec: &ColumnSpec) -> Self {
        let levels = match &spec.decl {
            ColumnDecl::Categorical { levels: Some(l) } => l.clone(),
            _ => Vec::new(),
        };
        let lookup = levels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { levels, lookup }
    }
}

/// Reads a comma-separated file with a header row. Columns not named in the
/// schema are ignored; empty cells are rejected.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header = reader.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_idx: Vec<usize> = schema.features.iter().map(|c| find(&c.name)).collect::<Result<_, _>>()?;
    let response_idx = find(&schema.response.name)?;

    let mut trackers: Vec<LevelTracker> = schema.features.iter().map(LevelTracker::new).collect();
    let mut response_tracker = LevelTracker::new(&schema.response);
    let mut rows = Vec::new();

    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        let cell = |idx: usize, name: &str| -> Result<&str, DataError> {
            match record.get(idx) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(DataError::MissingValue { row: row_no, column: name.to_string() }),
            }
        };
        let parse_num = |raw: &str, name: &str| -> Result<f64, DataError> {
            let v: f64 = raw.parse().map_err(|_| DataError::Parse {
                row: row_no,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row: row_no, column: name.to_string() });
            }
            Ok(v)
        };
        let mut features = Vec::with_capacity(feature_idx.len());
        for ((spec, &idx), tracker) in schema.features.iter().zip(&feature_idx).zip(trackers.iter_mut()) {
            let raw = cell(idx, &spec.name)?;
            features.push(match spec.decl {
                ColumnDecl::Continuous => FeatureValue::Continuous(parse_num(raw, &spec.name)?),
                ColumnDecl::Categorical { .. } => FeatureValue::Categorical(resolve_levels(
                    spec,
                    &mut tracker.levels,
                    &mut tracker.lookup,
                    raw,
                )?),
            });
        }
        let raw = cell(response_idx, &schema.response.name)?;
        let response = match schema.response.decl {
            ColumnDecl::Continuous => ResponseValue::Continuous(parse_num(raw, &schema.response.name)?),
            ColumnDecl::Categorical { .. } => ResponseValue::Class(resolve_levels(
                &schema.response,
                &mut response_tracker.levels,
                &mut response_tracker.lookup,
                raw,
            )?),
        };
        rows.push(Row { features, response });
    }

    let to_column = |spec: &ColumnSpec, tracker: LevelTracker| Column {
        name: spec.name.clone(),
        kind: match spec.decl {
            ColumnDecl::Continuous => ColumnKind::Continuous,
            ColumnDecl::Categorical { .. } => ColumnKind::Categorical { levels: tracker.levels },
        },
    };
    let columns = schema.features.iter().zip(trackers).map(|(s, t)| to_column(s, t)).collect();
    let response = to_column(&schema.response, response_tracker);
    Dataset::new(columns, response, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnTransform {
    Continuous { name: String, mean: f64, std: f64 },
    /// One-hot with the first level dropped.
    Categorical { name: String, levels: Vec<String> },
}

impl ColumnTransform {
    pub fn name(&self) -> &str {
        match self {
            ColumnTransform::Continuous { name, .. } | ColumnTransform::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnTransform::Continuous { .. } => 1,
            ColumnTransform::Categorical { levels, .. } => levels.len().saturating_sub(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub features: Vec<ColumnTransform>,
    /// For a continuous response: its transform. For a categorical one: the
    /// class ordering.
    pub response: ColumnTransform,
}

impl StandardizationParams {
    /// Width of the design matrix including the intercept.
    pub fn design_width(&self) -> usize {
        1 + self.features.iter().map(ColumnTransform::width).sum::<usize>()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["(intercept)".to_string()];
        for t in &self.features {
            match t {
                ColumnTransform::Continuous { name, .. } => names.push(name.clone()),
                ColumnTransform::Categorical { name, levels } => {
                    names.extend(levels.iter().skip(1).map(|l| format!("{name}={l}")))
                }
            }
        }
        names
    }
}

fn population_moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Population (divide-by-n) moments for every continuous column and a
/// continuous response; categorical level orders are taken as-is.
pub fn fit_standardization(population: &Dataset) -> Result<StandardizationParams, DataError> {
    let mut features = Vec::with_capacity(population.columns.len());
    for (j, col) in population.columns.iter().enumerate() {
        features.push(match &col.kind {
            ColumnKind::Continuous => {
                let values = population.rows.iter().map(move |r| match r.features[j] {
                    FeatureValue::Continuous(v) => v,
                    FeatureValue::Categorical(_) => unreachable!("validated by Dataset::new"),
                });
                let (mean, std) = population_moments(values);
                if std <= 0.0 || !std.is_finite() {
                    return Err(DataError::ZeroVariance(col.name.clone()));
                }
                ColumnTransform::Continuous { name: col.name.clone(), mean, std }
            }
            ColumnKind::Categorical { levels } => {
                ColumnTransform::Categorical { name: col.name.clone(), levels: levels.clone() }
            }
        });
    }
    let response = match &population.response.kind {
        ColumnKind::Continuous => {
            let (mean, std) = population_moments(population.rows.iter().map(|r| r.response.as_f64()));
            if std <= 0.0 || !std.is_finite() {
                return Err(DataError::ZeroVariance(population.response.name.clone()));
            }
            ColumnTransform::Continuous { name: population.response.name.clone(), mean, std }
        }
        ColumnKind::Categorical { levels } => {
            ColumnTransform::Categorical { name: population.response.name.clone(), levels: levels.clone() }
        }
    };
    Ok(StandardizationParams { features, response })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EncodedResponse {
    Continuous(Vec<f64>),
    Classes { labels: Vec<usize>, classes: usize },
}

impl EncodedResponse {
    pub fn len(&self) -> usize {
        match self {
            EncodedResponse::Continuous(v) => v.len(),
            EncodedResponse::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<usize> {
        match self {
            EncodedResponse::Continuous(_) => None,
            EncodedResponse::Classes { classes, .. } => Some(*classes),
        }
    }

    pub fn get(&self, i: usize) -> ResponseValue {
        match self {
            EncodedResponse::Continuous(v) => ResponseValue::Continuous(v[i]),
            EncodedResponse::Classes { labels, .. } => ResponseValue::Class(labels[i]),
        }
    }
}

/// `[1 x]` design with an encoded response.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: EncodedResponse,
    pub column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    /// Feature rows without the intercept column.
    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        (0..self.x.nrows())
            .map(|i| (1..self.x.ncols()).map(|j| self.x[(i, j)]).collect())
            .collect()
    }
}

/// Encoded rows stored row-major without the intercept: the form in which
/// rules condition on data and the engine grows the augmented sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    width: usize,
    classes: Option<usize>,
    features: Vec<f64>,
    responses: Vec<ResponseValue>,
}

impl Observations {
    pub fn new(width: usize, classes: Option<usize>) -> Self {
        Self { width, classes, features: Vec::new(), responses: Vec::new() }
    }

    pub fn with_capacity(width: usize, classes: Option<usize>, rows: usize) -> Self {
        Self {
            width,
            classes,
            features: Vec::with_capacity(rows * width),
            responses: Vec::with_capacity(rows),
        }
    }

    pub fn from_design(design: &DesignMatrix) -> Self {
        let rows = design.feature_rows();
        let mut obs = Self::with_capacity(design.width() - 1, design.y.classes(), rows.len());
        for (i, row) in rows.iter().enumerate() {
            obs.push(row, design.y.get(i));
        }
        obs
    }

    pub fn push(&mut self, x: &[f64], y: ResponseValue) {
        assert_eq!(x.len(), self.width, "feature row width");
        self.features.extend_from_slice(x);
        self.responses.push(y);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> Option<usize> {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn response(&self, i: usize) -> ResponseValue {
        self.responses[i]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn responses(&self) -> &[ResponseValue] {
        &self.responses
    }

    pub fn truncate(&mut self, rows: usize) {
        self.features.truncate(rows * self.width);
        self.responses.truncate(rows);
    }
}

fn map_level(transform_levels: &[String], column: &str, level: &str) -> Result<usize, DataError> {
    transform_levels
        .iter()
        .position(|l| l == level)
        .ok_or_else(|| DataError::UnknownLevel { column: column.to_string(), level: level.to_string() })
}

pub fn encode(dataset: &Dataset, params: &StandardizationParams) -> Result<DesignMatrix, DataError> {
    if dataset.columns.len() != params.features.len() {
        return Err(DataError::SchemaMismatch(format!(
            "dataset has {} feature columns, parameters describe {}",
            dataset.columns.len(),
            params.features.len()
        )));
    }
    // per column: dataset level index -> transform level index
    let mut level_maps: Vec<Option<Vec<usize>>> = Vec::with_capacity(params.features.len());
    for (col, t) in dataset.columns.iter().zip(&params.features) {
        if col.name != t.name() {
            return Err(DataError::SchemaMismatch(format!("column `{}` vs `{}`", col.name, t.name())));
        }
        level_maps.push(match (&col.kind, t) {
            (ColumnKind::Continuous, ColumnTransform::Continuous { .. }) => None,
            (ColumnKind::Categorical { levels }, ColumnTransform::Categorical { levels: tl, .. }) => Some(
                levels.iter().map(|l| map_level(tl, &col.name, l)).collect::<Result<_, _>>()?,
            ),
            _ => return Err(DataError::SchemaMismatch(format!("column `{}` changes kind", col.name))),
        });
    }

    let n = dataset.n();
    let width = params.design_width();
    let mut x = DMatrix::zeros(n, width);
    for (i, row) in dataset.rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        let mut offset = 1;
        for ((value, t), map) in row.features.iter().zip(&params.features).zip(&level_maps) {
            match (value, t) {
                (FeatureValue::Continuous(v), ColumnTransform::Continuous { mean, std, .. }) => {
                    x[(i, offset)] = (v - mean) / std;
                }
                (FeatureValue::Categorical(k), ColumnTransform::Categorical { .. }) => {
                    let level = map.as_ref().expect("categorical map")[*k];
                    if level > 0 {
                        x[(i, offset + level - 1)] = 1.0;
                    }
                }
                _ => unreachable!("kinds checked above"),
            }
            offset += t.width();
        }
    }

    let y = match (&dataset.response.kind, &params.response) {
        (ColumnKind::Continuous, ColumnTransform::Continuous { mean, std, .. }) => EncodedResponse::Continuous(
            dataset.rows.iter().map(|r| (r.response.as_f64() - mean) / std).collect(),
        ),
        (ColumnKind::Categorical { levels }, ColumnTransform::Categorical { levels: tl, .. }) => {
            let map: Vec<usize> = levels
                .iter()
                .map(|l| map_level(tl, &dataset.response.name, l))
                .collect::<Result<_, _>>()?;
            EncodedResponse::Classes {
                labels: dataset
                    .rows
                    .iter()
                    .map(|r| match r.response {
                        ResponseValue::Class(k) => map[k],
                        ResponseValue::Continuous(_) => unreachable!(),
                    })
                    .collect(),
                classes: tl.len(),
            }
        }
        _ => return Err(DataError::SchemaMismatch("response changes kind".into())),
    };
    Ok(DesignMatrix { x, y, column_names: params.column_names() })
}

/// One stratification variable. Continuous columns with `bins` are cut into
/// equal-count quantile bins; without `bins` their distinct values are strata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub column: String,
    #[serde(default)]
    pub bins: Option<usize>,
}

/// Bin index for every value: boundaries are the order statistics at ranks
/// `ceil(k n / bins)` (k = 1..bins-1) and a value equal to a boundary goes to
/// the lower bin.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let boundaries: Vec<f64> = (1..bins.max(1))
        .map(|k| sorted[((k * n).div_ceil(bins)).saturating_sub(1).min(n - 1)])
        .collect();
    values
        .iter()
        .map(|v| boundaries.iter().filter(|&&b| *v > b).count())
        .collect()
}

fn stratum_keys(dataset: &Dataset, strata: &[StratumSpec]) -> Result<Vec<Vec<i64>>, DataError> {
    let n = dataset.n();
    let mut keys = vec![Vec::with_capacity(strata.len()); n];
    for spec in strata {
        let column: Vec<i64> = if spec.column == dataset.response.name {
            match dataset.response.kind {
                ColumnKind::Categorical { .. } => {
                    dataset.rows.iter().map(|r| r.response.as_f64() as i64).collect()
                }
                ColumnKind::Continuous => {
                    let values: Vec<f64> = dataset.rows.iter().map(|r| r.response.as_f64()).collect();
                    numeric_keys(&values, spec.bins)
                }
            }
        } else {
            let j = dataset
                .column_index(&spec.column)
                .ok_or_else(|| DataError::MissingColumn(spec.column.clone()))?;
            match dataset.columns[j].kind {
                ColumnKind::Categorical { .. } => dataset
                    .rows
                    .iter()
                    .map(|r| match r.features[j] {
                        FeatureValue::Categorical(k) => k as i64,
                        FeatureValue::Continuous(_) => unreachable!(),
                    })
                    .collect(),
                ColumnKind::Continuous => {
                    let values: Vec<f64> = dataset
                        .rows
                        .iter()
                        .map(|r| match r.features[j] {
                            FeatureValue::Continuous(v) => v,
                            FeatureValue::Categorical(_) => unreachable!(),
                        })
                        .collect();
                    numeric_keys(&values, spec.bins)
                }
            }
        };
        for (key, c) in keys.iter_mut().zip(column) {
            key.push(c);
        }
    }
    Ok(keys)
}

fn numeric_keys(values: &[f64], bins: Option<usize>) -> Vec<i64> {
    match bins {
        Some(b) => quantile_bins(values, b).into_iter().map(|k| k as i64).collect(),
        None => {
            // distinct values, ranked
            let mut distinct = values.to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            values
                .iter()
                .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).expect("present") as i64)
                .collect()
        }
    }
}

/// Row indices (ascending) of a subset of size `n_train` drawn without
/// replacement, proportionally allocated across strata by largest remainder.
pub fn stratified_split_indices(
    dataset: &Dataset,
    n_train: usize,
    strata: &[StratumSpec],
    rng: &mut StreamRng,
) -> Result<Vec<usize>, DataError> {
    let n = dataset.n();
    if n_train > n {
        return Err(DataError::SubsetTooLarge { requested: n_train, available: n });
    }
    if strata.is_empty() {
        let mut picked = index::sample(rng, n, n_train).into_vec();
        picked.sort_unstable();
        return Ok(picked);
    }
    let keys = stratum_keys(dataset, strata)?;
    let mut groups: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.into_iter().enumerate() {
        groups.entry(key).or_default().push(i);
    }
    let groups: Vec<(Vec<i64>, Vec<usize>)> = groups.into_iter().collect();

    let quotas: Vec<f64> = groups.iter().map(|(_, rows)| n_train as f64 * rows.len() as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = n_train - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    // largest fractional part first, ties by stratum order
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &g in &order {
        if remaining == 0 {
            break;
        }
        alloc[g] += 1;
        remaining -= 1;
    }

    let mut picked = Vec::with_capacity(n_train);
    for ((key, rows), &k) in groups.iter().zip(&alloc) {
        if k > rows.len() {
            return Err(DataError::StratumTooSmall {
                stratum: format!("{key:?}"),
                available: rows.len(),
                requested: k,
            });
        }
        picked.extend(index::sample(rng, rows.len(), k).into_iter().map(|i| rows[i]));
    }
    picked.sort_unstable();
    Ok(picked)
}

pub fn stratified_split(
    dataset: &Dataset,
    n_train: usize,
    strata: &[StratumSpec],
    rng: &mut StreamRng,
) -> Result<Dataset, DataError> {
    let idx = stratified_split_indices(dataset, n_train, strata, rng)?;
    Ok(dataset.subset(&idx))
}
