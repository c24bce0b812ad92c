//! Synthetic data-generating setups with features uniform on `[-1, 1]^d` and
//! a linear signal `x' beta`, plus the population risk minimizer.
//!
//! Synthetic data are standardized with analytic population moments: each
//! feature has mean 0 and standard deviation `1/sqrt(3)`, and a continuous
//! response has mean 0 and variance `|beta|^2 / 3` plus the noise variance.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    encode, Column, ColumnKind, ColumnTransform, DataError, Dataset, FeatureValue, ResponseValue, Row,
    StandardizationParams,
};
use crate::functionals::{fit_binary_logistic, FitError, LogisticOptions, LossKind, LossSpec};
use crate::rng::StreamRng;
use crate::special::norm_cdf;
use crate::uq::quantile_sorted;

pub const DEFAULT_DIM: usize = 10;
pub const BETA_RANGE: (f64, f64) = (-2.0, 3.0);
pub const DEFAULT_CONTINUOUS_N: usize = 20;
pub const DEFAULT_BINARY_N: usize = 100;
/// Sample size of the large-sample estimate of the population minimizer.
pub const POPULATION_SAMPLE: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("loss does not match the setup's response")]
    LossMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetupKind {
    Gaussian {
        #[serde(default = "unit")]
        noise_sd: f64,
    },
    Student {
        df: f64,
    },
    /// Noise sd `s_left` below the sample lower quartile of the first
    /// feature, `s_mid` between the quartiles, 1 above.
    Heteroscedastic {
        s_left: f64,
        s_mid: f64,
    },
    Logistic,
    /// Link `0.7 Phi(u - a) + 0.3 Phi(u - 2)`.
    GmmLink {
        a: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl SetupKind {
    pub fn is_binary(&self) -> bool {
        matches!(self, SetupKind::Logistic | SetupKind::GmmLink { .. })
    }

    pub fn default_n(&self) -> usize {
        if self.is_binary() {
            DEFAULT_BINARY_N
        } else {
            DEFAULT_CONTINUOUS_N
        }
    }

    /// Success probability under the link at linear predictor `u`.
    pub fn link(&self, u: f64) -> Option<f64> {
        match self {
            SetupKind::Logistic => Some(1.0 / (1.0 + (-u).exp())),
            SetupKind::GmmLink { a } => Some(0.7 * norm_cdf(u - a) + 0.3 * norm_cdf(u - 2.0)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), DgpError> {
        match *self {
            SetupKind::Gaussian { noise_sd } if !(noise_sd > 0.0) => {
                Err(DgpError::Invalid(format!("noise sd {noise_sd} must be positive")))
            }
            SetupKind::Student { df } if !(df > 2.0) => {
                Err(DgpError::Invalid(format!("Student-t needs df > 2 for a finite variance, got {df}")))
            }
            SetupKind::Heteroscedastic { s_left, s_mid } if !(s_left > 0.0 && s_mid > 0.0) => {
                Err(DgpError::Invalid("heteroscedastic scales must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Marginal noise variance (heteroscedastic: quartile-weighted).
    fn noise_variance(&self) -> f64 {
        match *self {
            SetupKind::Gaussian { noise_sd } => noise_sd * noise_sd,
            SetupKind::Student { df } => df / (df - 2.0),
            SetupKind::Heteroscedastic { s_left, s_mid } => 0.25 * s_left * s_left + 0.5 * s_mid * s_mid + 0.25,
            SetupKind::Logistic | SetupKind::GmmLink { .. } => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSetup {
    pub kind: SetupKind,
    pub beta: Vec<f64>,
    pub n: usize,
}

impl SyntheticSetup {
    /// Draws `beta` uniformly from `[-2, 3]^dim`; it stays fixed for every
    /// dataset generated from the setup.
    pub fn new(kind: SetupKind, dim: usize, n: usize, rng: &mut StreamRng) -> Result<Self, DgpError> {
        let beta = (0..dim).map(|_| rng.random_range(BETA_RANGE.0..BETA_RANGE.1)).collect();
        Self::with_beta(kind, beta, n)
    }

    pub fn with_beta(kind: SetupKind, beta: Vec<f64>, n: usize) -> Result<Self, DgpError> {
        kind.validate()?;
        if beta.is_empty() || n == 0 {
            return Err(DgpError::Invalid("need at least one feature and one row".into()));
        }
        Ok(Self { kind, beta, n })
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    fn feature_sd() -> f64 {
        1.0 / 3f64.sqrt()
    }

    fn response_sd(&self) -> Option<f64> {
        if self.kind.is_binary() {
            return None;
        }
        let signal: f64 = self.beta.iter().map(|b| b * b).sum::<f64>() / 3.0;
        Some((signal + self.kind.noise_variance()).sqrt())
    }

    fn columns(&self) -> (Vec<Column>, Column) {
        let columns = (1..=self.dim())
            .map(|k| Column { name: format!("x{k}"), kind: ColumnKind::Continuous })
            .collect();
        let response = Column {
            name: "y".into(),
            kind: if self.kind.is_binary() {
                ColumnKind::Categorical { levels: vec!["0".into(), "1".into()] }
            } else {
                ColumnKind::Continuous
            },
        };
        (columns, response)
    }

    /// Analytic population standardization.
    pub fn standardization(&self) -> StandardizationParams {
        let features = (1..=self.dim())
            .map(|k| ColumnTransform::Continuous { name: format!("x{k}"), mean: 0.0, std: Self::feature_sd() })
            .collect();
        let response = match self.response_sd() {
            Some(std) => ColumnTransform::Continuous { name: "y".into(), mean: 0.0, std },
            None => ColumnTransform::Categorical { name: "y".into(), levels: vec!["0".into(), "1".into()] },
        };
        StandardizationParams { features, response }
    }

    pub fn generate(&self, rng: &mut StreamRng) -> Dataset {
        self.generate_n(self.n, rng)
    }

    pub fn generate_n(&self, n: usize, rng: &mut StreamRng) -> Dataset {
        let d = self.dim();
        let xs: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let signal: Vec<f64> = xs.iter().map(|x| x.iter().zip(&self.beta).map(|(a, b)| a * b).sum()).collect();

        let responses: Vec<ResponseValue> = match self.kind {
            SetupKind::Gaussian { noise_sd } => signal
                .iter()
                .map(|s| {
                    let e: f64 = rng.sample(StandardNormal);
                    ResponseValue::Continuous(s + noise_sd * e)
                })
                .collect(),
            SetupKind::Student { df } => {
                let t = StudentT::new(df).expect("validated df");
                signal.iter().map(|s| ResponseValue::Continuous(s + t.sample(rng))).collect()
            }
            SetupKind::Heteroscedastic { s_left, s_mid } => {
                let mut first: Vec<f64> = xs.iter().map(|x| x[0]).collect();
                first.sort_by(f64::total_cmp);
                let (q1, q3) = (quantile_sorted(&first, 0.25), quantile_sorted(&first, 0.75));
                signal
                    .iter()
                    .zip(&xs)
                    .map(|(s, x)| {
                        let sd = if x[0] < q1 {
                            s_left
                        } else if x[0] <= q3 {
                            s_mid
                        } else {
                            1.0
                        };
                        let e: f64 = rng.sample(StandardNormal);
                        ResponseValue::Continuous(s + sd * e)
                    })
                    .collect()
            }
            SetupKind::Logistic | SetupKind::GmmLink { .. } => signal
                .iter()
                .map(|&s| {
                    let p = self.kind.link(s).expect("binary kind");
                    ResponseValue::Class(usize::from(rng.random::<f64>() < p))
                })
                .collect(),
        };

        let (columns, response) = self.columns();
        let rows = xs
            .into_iter()
            .zip(responses)
            .map(|(x, y)| Row { features: x.into_iter().map(FeatureValue::Continuous).collect(), response: y })
            .collect();
        Dataset::new(columns, response, rows).expect("generated rows fit the schema")
    }

    /// `(0, beta)` mapped to the standardized scale.
    pub fn analytic_theta(&self) -> Vec<f64> {
        let ys = self.response_sd().unwrap_or(1.0);
        let mut theta = vec![0.0];
        theta.extend(self.beta.iter().map(|b| b * Self::feature_sd() / ys));
        theta
    }

    fn check_loss(&self, loss: &LossSpec) -> Result<(), DgpError> {
        let ok = match loss.kind {
            LossKind::SquaredError => !self.kind.is_binary(),
            LossKind::MultinomialNll { classes } => self.kind.is_binary() && classes == 2,
        };
        if ok && loss.mask.len() == self.dim() + 1 {
            Ok(())
        } else {
            Err(DgpError::LossMismatch)
        }
    }

    /// Population minimizer on the standardized scale: exact for the
    /// Gaussian and logistic kinds, otherwise estimated on a fresh sample of
    /// `POPULATION_SAMPLE` rows.
    pub fn population_theta(&self, loss: &LossSpec, rng: &mut StreamRng) -> Result<Vec<f64>, DgpError> {
        self.check_loss(loss)?;
        let full = loss.mask.iter().all(|m| *m);
        if full && matches!(self.kind, SetupKind::Gaussian { .. } | SetupKind::Logistic) {
            return Ok(self.analytic_theta());
        }
        self.sample_theta(loss, POPULATION_SAMPLE, rng)
    }

    /// Minimizer over a fresh sample of `size` rows.
    pub fn sample_theta(&self, loss: &LossSpec, size: usize, rng: &mut StreamRng) -> Result<Vec<f64>, DgpError> {
        self.check_loss(loss)?;
        let data = self.generate_n(size, rng);
        let design = encode(&data, &self.standardization())?;
        if let (LossKind::MultinomialNll { .. }, crate::data::EncodedResponse::Classes { labels, .. }) =
            (loss.kind, &design.y)
        {
            // the two-class solver avoids the per-row loops of the general one
            let active = loss.active_columns();
            let x: DMatrix<f64> = design.x.select_columns(&active);
            let opts = LogisticOptions { damping: loss.damping, ..Default::default() };
            let fit = fit_binary_logistic(&x, labels, &opts)?;
            return Ok(fit.theta);
        }
        Ok(loss.fit(&design.x, &design.y)?.theta)
    }
}

/// Record of a synthetic setup for the run manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupManifest {
    pub name: String,
    pub setup: SyntheticSetup,
    pub seed: u64,
    pub theta0: Vec<f64>,
}

/// Population minimizer of a real dataset: the full file is the population.
pub fn population_theta_dataset(
    population: &Dataset,
    params: &StandardizationParams,
    loss: &LossSpec,
) -> Result<Vec<f64>, DgpError> {
    let design = encode(population, params)?;
    Ok(loss.fit(&design.x, &design.y)?.theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn links() {
        assert_eq!(SetupKind::Logistic.link(0.0), Some(0.5));
        assert!((SetupKind::GmmLink { a: -1.0 }.link(40.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(SetupKind::GmmLink { a: 0.0 }.link(-40.0).unwrap() < 1e-12);
    }

    #[test]
    fn beta_in_range_and_reproducible() {
        let mut a = RngStream::new(1, 0).rng();
        let mut b = RngStream::new(1, 0).rng();
        let s = SyntheticSetup::new(SetupKind::Logistic, 10, 100, &mut a).unwrap();
        let t = SyntheticSetup::new(SetupKind::Logistic, 10, 100, &mut b).unwrap();
        assert_eq!(s, t);
        assert!(s.beta.iter().all(|b| (-2.0..3.0).contains(b)));
        assert_eq!(s.generate(&mut a), t.generate(&mut b));
    }

    #[test]
    fn heteroscedastic_scales_follow_quartiles() {
        // with beta = 0 the response is pure noise
        let setup = SyntheticSetup::with_beta(SetupKind::Heteroscedastic { s_left: 0.25, s_mid: 0.5 }, vec![0.0; 2], 4000)
            .unwrap();
        let data = setup.generate(&mut RngStream::new(2, 0).rng());
        let mut groups = [Vec::new(), Vec::new(), Vec::new()];
        let mut first: Vec<f64> = data
            .rows()
            .iter()
            .map(|r| match r.features[0] {
                FeatureValue::Continuous(v) => v,
                _ => unreachable!(),
            })
            .collect();
        first.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile_sorted(&first, 0.25), quantile_sorted(&first, 0.75));
        for r in data.rows() {
            let FeatureValue::Continuous(x) = r.features[0] else { unreachable!() };
            let g = if x < q1 { 0 } else if x <= q3 { 1 } else { 2 };
            groups[g].push(r.response.as_f64());
        }
        let sd = |v: &[f64]| (v.iter().map(|y| y * y).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd(&groups[0]) - 0.25).abs() < 0.03);
        assert!((sd(&groups[1]) - 0.5).abs() < 0.04);
        assert!((sd(&groups[2]) - 1.0).abs() < 0.08);
    }

    #[test]
    fn rejects_infinite_variance_noise() {
        assert!(SyntheticSetup::with_beta(SetupKind::Student { df: 2.0 }, vec![1.0], 5).is_err());
    }
}
