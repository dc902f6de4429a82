use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Categorical distribution over budget indices.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSampler {
    pub weights: Vec<f64>,
}

impl BudgetSampler {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Train("no budgets to sample".into()));
        }
        Ok(BudgetSampler { weights: vec![1.0 / n as f64; n] })
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Train(format!("budget weights {weights:?} must be positive and sum to 1")));
        }
        Ok(BudgetSampler { weights })
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        if self.weights.len() == 1 {
            return 0;
        }
        rng.categorical(&self.weights)
    }
}
