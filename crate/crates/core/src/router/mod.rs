//! Budget-conditioned routers choosing a configuration per elastic axis,
//! Gumbel-Softmax relaxation, mask generation and the resource cost model.

mod bank;
mod config;
mod cost;

pub use bank::{generate_masks, segments, Candidates, RouteParams, RouterBank, RouterOutput};
pub use config::{Anneal, Axis, BudgetSpec, Integration, RouterConfig, DEPTH_MASK_OFFSET};
pub use cost::{base_params, cost_param_count, layer_params, CostMetric, CostModel};

use crate::numerics::{Rng, Scalar, Tape, Var};

/// `π_i = softmax((z + g) / τ)_i` over each row; `rng = None` sets `g = 0`.
pub fn gumbel_softmax(logits: &[f64], tau: f64, rng: Option<&mut Rng>) -> alloc::vec::Vec<f64> {
    let noisy: alloc::vec::Vec<f64> = match rng {
        Some(r) => logits.iter().map(|z| (z + r.gumbel()) / tau).collect(),
        None => logits.iter().map(|z| z / tau).collect(),
    };
    let m = noisy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: alloc::vec::Vec<f64> = noisy.iter().map(|v| num_traits::Float::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `|cost − target| / target` on the tape.
pub fn router_loss<T: Scalar>(tape: &mut Tape<T>, cost: Var, target: f64) -> Var {
    let diff = tape.add_scalar(cost, T::from_f64(-target));
    let diff = tape.abs(diff);
    tape.scale(diff, T::from_f64(1.0 / target))
}
