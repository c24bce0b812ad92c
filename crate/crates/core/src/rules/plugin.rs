use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Observations, ResponseValue};
use crate::functionals::{fit_linear, fit_logistic_from, FitError, LogisticOptions, GRADIENT_TOLERANCE};

use super::{PredictedDistribution, RuleError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginModel {
    /// `y ~ N([1 x] theta, 1)`.
    GaussianLinear,
    /// Multinomial logit with the first class as reference.
    Logistic,
}

/// Parametric plug-in: the next response is drawn from the assumed model at
/// the current maximum-likelihood estimate, refitted after every update.
#[derive(Clone, Debug)]
pub struct PluginState {
    model: PluginModel,
    data: Observations,
    theta: Vec<f64>,
    converged: bool,
    // Gaussian-linear sufficient statistics over [1 x]
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    response_norm_sq: f64,
}

fn augmented(x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
}

impl PluginState {
    pub fn init(model: PluginModel, data: Observations) -> Result<Self, RuleError> {
        let q = data.width() + 1;
        let mut state = Self {
            model,
            theta: Vec::new(),
            converged: false,
            gram: DMatrix::zeros(q, q),
            moment: DVector::zeros(q),
            response_norm_sq: 0.0,
            data: Observations::new(data.width(), data.classes()),
        };
        for i in 0..data.len() {
            state.absorb(data.row(i), data.response(i))?;
        }
        match model {
            PluginModel::GaussianLinear => {
                let x = DMatrix::from_fn(state.data.len(), q, |i, j| {
                    if j == 0 {
                        1.0
                    } else {
                        state.data.row(i)[j - 1]
                    }
                });
                let y: Vec<f64> = state.data.responses().iter().map(|r| r.as_f64()).collect();
                let fit = fit_linear(&x, &y)?;
                state.theta = fit.theta;
                state.converged = fit.converged;
            }
            PluginModel::Logistic => state.refit()?,
        }
        Ok(state)
    }

    pub fn model(&self) -> PluginModel {
        self.model
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn step(&self) -> usize {
        self.data.len()
    }

    fn absorb(&mut self, x: &[f64], y: ResponseValue) -> Result<(), RuleError> {
        if x.len() != self.data.width() {
            return Err(RuleError::Dimension { expected: self.data.width(), got: x.len() });
        }
        match (self.model, y) {
            (PluginModel::GaussianLinear, ResponseValue::Continuous(v)) => {
                let z = augmented(x);
                self.gram.syger(1.0, &z, &z, 1.0);
                self.moment.axpy(v, &z, 1.0);
                self.response_norm_sq += v * v;
            }
            (PluginModel::Logistic, ResponseValue::Class(k)) if k < self.data.classes().unwrap_or(0) => {}
            (_, other) => return Err(RuleError::ResponseKind(other)),
        }
        self.data.push(x, y);
        Ok(())
    }

    fn refit(&mut self) -> Result<(), RuleError> {
        match self.model {
            PluginModel::GaussianLinear => {
                let gram = self.gram.clone();
                let chol = gram.cholesky().ok_or(FitError::RankDeficient(0.0))?;
                let mut theta = chol.solve(&self.moment);
                let tolerance = GRADIENT_TOLERANCE * (1.0 + self.response_norm_sq.sqrt());
                let mut gradient = &self.gram * &theta - &self.moment;
                if gradient.norm() > tolerance {
                    theta -= chol.solve(&gradient);
                    gradient = &self.gram * &theta - &self.moment;
                }
                self.converged = gradient.norm() <= tolerance;
                self.theta = theta.as_slice().to_vec();
            }
            PluginModel::Logistic => {
                let classes = self.data.classes().unwrap_or(2);
                let q = self.data.width() + 1;
                let x = DMatrix::from_fn(self.data.len(), q, |i, j| {
                    if j == 0 {
                        1.0
                    } else {
                        self.data.row(i)[j - 1]
                    }
                });
                let labels: Vec<usize> = self
                    .data
                    .responses()
                    .iter()
                    .map(|r| match r {
                        ResponseValue::Class(k) => *k,
                        ResponseValue::Continuous(_) => unreachable!("checked on absorb"),
                    })
                    .collect();
                let warm = (!self.theta.is_empty()).then_some(self.theta.as_slice());
                let fit = fit_logistic_from(&x, &labels, classes, &LogisticOptions::default(), warm)?;
                self.theta = fit.theta;
                self.converged = fit.converged;
            }
        }
        Ok(())
    }

    pub fn update(&mut self, x: &[f64], y: ResponseValue) -> Result<(), RuleError> {
        self.absorb(x, y)?;
        self.refit()
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictedDistribution, RuleError> {
        if x.len() != self.data.width() {
            return Err(RuleError::Dimension { expected: self.data.width(), got: x.len() });
        }
        let z = augmented(x);
        let q = z.len();
        Ok(match self.model {
            PluginModel::GaussianLinear => {
                let mean = z.iter().zip(&self.theta).map(|(a, b)| a * b).sum();
                PredictedDistribution::Normal { mean, sd: 1.0 }
            }
            PluginModel::Logistic => {
                let blocks = self.theta.len() / q;
                let mut logits = vec![0.0];
                logits.extend(
                    (0..blocks).map(|k| z.iter().zip(&self.theta[k * q..(k + 1) * q]).map(|(a, b)| a * b).sum::<f64>()),
                );
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                PredictedDistribution::Categorical { probs: exps.iter().map(|e| e / total).collect() }
            }
        })
    }
}
