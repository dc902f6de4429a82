use crate::error::Result;
use crate::model::{LayerSpec, ModelConfig, Selection};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostMetric {
    ParamCount,
    MemoryBytes { bytes_per_param: usize },
}

/// Cost of a selection under a metric. Every metric is a positive multiple
/// of the exact parameter count, so it is monotone in every retained count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostModel {
    pub metric: CostMetric,
}

impl CostModel {
    pub fn params() -> Self {
        CostModel { metric: CostMetric::ParamCount }
    }

    pub fn per_param(&self) -> f64 {
        match self.metric {
            CostMetric::ParamCount => 1.0,
            CostMetric::MemoryBytes { bytes_per_param } => bytes_per_param as f64,
        }
    }

    pub fn cost(&self, cfg: &ModelConfig, sel: &Selection) -> Result<f64> {
        Ok(cost_param_count(cfg, sel)? as f64 * self.per_param())
    }
}

/// Embedding table, final norm and LM head at `d_e` channels.
pub fn base_params(cfg: &ModelConfig, d_e: usize) -> usize {
    2 * cfg.vocab * d_e + 2 * d_e
}

/// Parameters of one layer with `d_e` channels and the widths in `spec`,
/// including its input norm.
pub fn layer_params(cfg: &ModelConfig, d_e: usize, spec: &LayerSpec) -> usize {
    let norm = 2 * d_e;
    norm + match *spec {
        LayerSpec::Mamba { heads, head_dim } => {
            let inner = heads * head_dim;
            let bc = cfg.g * cfg.d_s;
            let k = cfg.conv_kernel;
            2 * d_e * inner + 2 * d_e * bc + d_e * heads + 2 * heads + inner * k + 2 * bc * k + inner + inner * d_e
        }
        LayerSpec::Attention { heads, head_dim } => 4 * d_e * heads * head_dim,
        LayerSpec::Ffn { hidden } => 2 * d_e * hidden,
    }
}

/// Exact parameter count of the model sliced to `sel`.
pub fn cost_param_count(cfg: &ModelConfig, sel: &Selection) -> Result<usize> {
    sel.validate(cfg)?;
    Ok(base_params(cfg, sel.d_e) + sel.layers.iter().flatten().map(|l| layer_params(cfg, sel.d_e, l)).sum::<usize>())
}
