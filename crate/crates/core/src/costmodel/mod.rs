//! Closed-form training-token and deployment-memory costs of building a
//! model family separately versus as one nested elastic model.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Per-model pruning exploration plus distillation.
    Minitron,
    /// One elastic distillation run for the whole family.
    Elastic,
    /// Every model trained from scratch.
    Pretrain,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Minitron => "minitron",
            Method::Elastic => "elastic",
            Method::Pretrain => "pretrain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deployment {
    /// Each model stored on its own.
    Separate,
    /// One parent checkpoint plus router.
    Nested,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyPlan {
    pub method: Method,
    pub n: usize,
    pub tokens_explore: Option<f64>,
    pub tokens_kd: Option<f64>,
    pub tokens_elastic_kd: Option<f64>,
    /// Pretraining tokens per model.
    pub tokens_pretrain: Vec<f64>,
    /// Parameter count per model.
    pub sizes: Vec<f64>,
    pub dtype_bytes: f64,
    pub eps_router: f64,
}

impl FamilyPlan {
    pub fn new(method: Method, n: usize) -> Self {
        FamilyPlan {
            method,
            n,
            tokens_explore: None,
            tokens_kd: None,
            tokens_elastic_kd: None,
            tokens_pretrain: Vec::new(),
            sizes: Vec::new(),
            dtype_bytes: 2.0,
            eps_router: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.tokens_explore, self.tokens_kd, self.tokens_elastic_kd];
        if counts.iter().flatten().chain(&self.tokens_pretrain).chain(&self.sizes).any(|&v| !(v >= 0.0)) || !(self.dtype_bytes > 0.0) {
            return Err(Error::Config("family plan counts must be nonnegative".into()));
        }
        if !(0.0..0.02).contains(&self.eps_router) {
            return Err(Error::Config(alloc::format!("router overhead {} must lie in [0, 0.02)", self.eps_router)));
        }
        Ok(())
    }
}

/// Training tokens needed to obtain the whole family.
pub fn tokens_required(plan: &FamilyPlan) -> Result<f64> {
    plan.validate()?;
    match plan.method {
        Method::Minitron => {
            let explore = plan.tokens_explore.ok_or(Error::MissingField("tokens_explore"))?;
            let kd = plan.tokens_kd.ok_or(Error::MissingField("tokens_kd"))?;
            Ok(plan.n as f64 * (explore + kd))
        }
        Method::Elastic => plan.tokens_elastic_kd.ok_or(Error::MissingField("tokens_elastic_kd")),
        Method::Pretrain => {
            if plan.tokens_pretrain.is_empty() && plan.n > 0 {
                return Err(Error::MissingField("tokens_pretrain"));
            }
            Ok(plan.tokens_pretrain.iter().sum())
        }
    }
}

/// Bytes of weights needed to serve every model of the family.
pub fn deployment_memory(plan: &FamilyPlan, deployment: Deployment) -> Result<f64> {
    plan.validate()?;
    if plan.sizes.is_empty() {
        return Err(Error::MissingField("sizes"));
    }
    Ok(match deployment {
        Deployment::Separate => plan.sizes.iter().sum::<f64>() * plan.dtype_bytes,
        Deployment::Nested => plan.sizes.iter().cloned().fold(0.0, f64::max) * plan.dtype_bytes * (1.0 + plan.eps_router),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub method: Method,
    pub tokens: f64,
    pub memory_bytes: f64,
}

/// Family sizes `max·i/n` for `i = 1..=n`.
pub fn family_sizes(max_size: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| max_size * i as f64 / n as f64).collect()
}

/// Token and memory cost of Minitron (separate) and elastic (nested) families
/// of `1..=n_max` models.
pub fn sweep(n_max: usize, explore: f64, kd: f64, elastic_kd: f64, max_size: f64, dtype_bytes: f64, eps_router: f64) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for n in 1..=n_max {
        for (method, deployment) in [(Method::Minitron, Deployment::Separate), (Method::Elastic, Deployment::Nested)] {
            let plan = FamilyPlan {
                tokens_explore: Some(explore),
                tokens_kd: Some(kd),
                tokens_elastic_kd: Some(elastic_kd),
                sizes: family_sizes(max_size, n),
                dtype_bytes,
                eps_router,
                ..FamilyPlan::new(method, n)
            };
            rows.push(SweepRow { n, method, tokens: tokens_required(&plan)?, memory_bytes: deployment_memory(&plan, deployment)? });
        }
    }
    Ok(rows)
}
