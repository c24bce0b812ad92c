use rand::Rng;

use crate::data::{Observations, ResponseValue};
use crate::rng::StreamRng;

use super::RuleError;

/// Bayesian bootstrap: the next pair is a uniform draw from the pool of all
/// pairs seen so far, and the drawn pair joins the pool.
#[derive(Clone, Debug)]
pub struct BootstrapState {
    pool: Observations,
}

impl BootstrapState {
    pub fn new(pool: Observations) -> Self {
        Self { pool }
    }

    pub fn pool(&self) -> &Observations {
        &self.pool
    }

    pub fn step(&self) -> usize {
        self.pool.len()
    }

    pub fn sample_index(&self, rng: &mut StreamRng) -> usize {
        rng.random_range(0..self.pool.len())
    }

    pub fn update(&mut self, x: &[f64], y: ResponseValue) -> Result<(), RuleError> {
        if x.len() != self.pool.width() {
            return Err(RuleError::Dimension { expected: self.pool.width(), got: x.len() });
        }
        self.pool.push(x, y);
        Ok(())
    }
}
