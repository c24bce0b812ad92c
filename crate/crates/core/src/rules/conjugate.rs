use crate::data::ResponseValue;

use super::{PredictedDistribution, RuleError};

/// Intercept-only normal model with known noise variance and a normal prior
/// on the mean. Its posterior predictive is an exact martingale, so forward
/// sampling with it reproduces the Bayesian posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateNormalState {
    prior_mean: f64,
    prior_var: f64,
    noise_var: f64,
    count: usize,
    sum: f64,
}

impl ConjugateNormalState {
    pub fn new(prior_mean: f64, prior_var: f64, noise_var: f64) -> Self {
        Self { prior_mean, prior_var, noise_var, count: 0, sum: 0.0 }
    }

    pub fn step(&self) -> usize {
        self.count
    }

    /// Posterior variance of the mean.
    pub fn posterior_var(&self) -> f64 {
        1.0 / (1.0 / self.prior_var + self.count as f64 / self.noise_var)
    }

    pub fn posterior_mean(&self) -> f64 {
        self.posterior_var() * (self.prior_mean / self.prior_var + self.sum / self.noise_var)
    }

    pub fn predict(&self) -> PredictedDistribution {
        PredictedDistribution::Normal {
            mean: self.posterior_mean(),
            sd: (self.noise_var + self.posterior_var()).sqrt(),
        }
    }

    pub fn update(&mut self, y: ResponseValue) -> Result<(), RuleError> {
        match y {
            ResponseValue::Continuous(v) if v.is_finite() => {
                self.count += 1;
                self.sum += v;
                Ok(())
            }
            other => Err(RuleError::ResponseKind(other)),
        }
    }
}

/// Beta-Bernoulli predictive `p_i(1) = (a + s_i) / (a + b + i)`, with `s_i`
/// the number of ones among `i` absorbed labels. Ignores features and is an
/// exact martingale.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaBernoulliState {
    a: f64,
    b: f64,
    count: usize,
    ones: usize,
}

impl BetaBernoulliState {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, count: 0, ones: 0 }
    }

    pub fn step(&self) -> usize {
        self.count
    }

    pub fn prob_one(&self) -> f64 {
        (self.a + self.ones as f64) / (self.a + self.b + self.count as f64)
    }

    pub fn predict(&self) -> PredictedDistribution {
        let p = self.prob_one();
        PredictedDistribution::Categorical { probs: vec![1.0 - p, p] }
    }

    pub fn update(&mut self, y: ResponseValue) -> Result<(), RuleError> {
        match y {
            ResponseValue::Class(k) if k < 2 => {
                self.count += 1;
                self.ones += k;
                Ok(())
            }
            other => Err(RuleError::ResponseKind(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_closed_form() {
        let mut s = ConjugateNormalState::new(0.0, 1.0, 1.0);
        assert_eq!(s.predict(), PredictedDistribution::Normal { mean: 0.0, sd: 2f64.sqrt() });
        s.update(ResponseValue::Continuous(2.0)).unwrap();
        assert!((s.posterior_mean() - 1.0).abs() < 1e-15);
        match s.predict() {
            PredictedDistribution::Normal { mean, sd } => {
                assert!((mean - 1.0).abs() < 1e-15 && (sd * sd - 1.5).abs() < 1e-15)
            }
            _ => panic!(),
        }
    }

    #[test]
    fn flat_prior_tracks_the_data() {
        let mut s = ConjugateNormalState::new(0.0, 1e6, 1.0);
        s.update(ResponseValue::Continuous(5.0)).unwrap();
        assert!((s.posterior_mean() - 5.0).abs() < 1e-4);
    }

    #[test]
    fn beta_bernoulli_counts() {
        let mut s = BetaBernoulliState::new(1.0, 1.0);
        assert_eq!(s.prob_one(), 0.5);
        s.update(ResponseValue::Class(1)).unwrap();
        s.update(ResponseValue::Class(1)).unwrap();
        s.update(ResponseValue::Class(0)).unwrap();
        assert!((s.prob_one() - 3.0 / 5.0).abs() < 1e-15);
        assert!(s.update(ResponseValue::Class(2)).is_err());
    }
}
