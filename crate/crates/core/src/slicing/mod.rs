//! The elastic checkpoint and zero-shot extraction of nested sub-models.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::importance::Ranking;
use crate::model::{HybridModel, MaskSet, Selection};
use crate::numerics::Scalar;
use crate::router::{Anneal, BudgetSpec, Candidates, CostModel, RouterBank};

/// Largest router size, as a fraction of the model, a checkpoint may carry.
pub const MAX_ROUTER_OVERHEAD: f64 = 0.02;

/// Everything needed to extract any trained budget: the re-sorted full
/// model, its rankings, the router bank and the budget table.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: HybridModel<T>,
    pub bank: RouterBank<T>,
    pub ranking: Ranking,
    pub budgets: Vec<BudgetSpec>,
    pub cost: CostModel,
    pub anneal: Anneal,
}

impl<T: Scalar> Checkpoint<T> {
    /// Router parameters as a fraction of model parameters.
    pub fn router_overhead(&self) -> f64 {
        self.bank.param_count() as f64 / self.model.param_count() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.len() != self.bank.n_targets {
            return Err(Error::Inventory(alloc::format!("{} budgets for {} router targets", self.budgets.len(), self.bank.n_targets)));
        }
        if self.ranking.depth.len() != self.model.config.n_layers() {
            return Err(Error::Inventory("depth ranking does not cover every layer".into()));
        }
        let overhead = self.router_overhead();
        if overhead >= MAX_ROUTER_OVERHEAD {
            return Err(Error::Inventory(alloc::format!("router overhead {overhead:.4} is not below {MAX_ROUTER_OVERHEAD}")));
        }
        self.bank.config.validate(&self.model.config)
    }

    pub fn budget_index(&self, label: &str) -> Result<usize> {
        self.budgets.iter().position(|b| b.label == label).ok_or_else(|| Error::UnknownBudget(label.into()))
    }

    pub fn candidates(&self) -> Result<Candidates> {
        Candidates::new(&self.model.config, &self.bank.config, &self.ranking.depth)
    }

    /// Deterministic router decode (no noise, unit logit scale).
    pub fn selection(&self, label: &str) -> Result<Selection> {
        let b = self.budget_index(label)?;
        self.bank.decode(&self.model.config, &self.candidates()?, b)
    }

    /// Copy the retained parameters of a trained budget into a smaller model.
    pub fn extract(&self, label: &str) -> Result<(HybridModel<T>, Selection)> {
        let sel = self.selection(label)?;
        Ok((self.model.slice(&sel)?, sel))
    }

    pub fn masks(&self, label: &str) -> Result<MaskSet<T>> {
        MaskSet::from_selection(&self.model.config, &self.selection(label)?)
    }
}

/// `max|a − b| / max|a|`, or the plain maximum difference when `a` is all
/// zero. Any non-finite difference counts as infinite.
pub fn max_relative_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut diff = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        if !d.is_finite() {
            return f64::INFINITY;
        }
        diff = diff.max(d);
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub budget: alloc::string::String,
    pub prompts: usize,
    pub max_rel_diff: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Pass threshold for the masked/sliced comparison at this precision.
pub fn equivalence_threshold<T: Scalar>() -> f64 {
    if T::BYTES >= 8 {
        1e-10
    } else {
        1e-5
    }
}

/// Compare the masked full model against the extracted sub-model on every prompt.
pub fn verify_equivalence<T: Scalar>(ckpt: &Checkpoint<T>, label: &str, prompts: &[Vec<usize>]) -> Result<EquivalenceReport> {
    if prompts.is_empty() || prompts.iter().any(Vec::is_empty) {
        return Err(Error::EmptyCalibration);
    }
    let masks = ckpt.masks(label)?;
    let (sub, _) = ckpt.extract(label)?;
    let worst = compare_paths(&ckpt.model, &masks, &sub, prompts)?;
    let threshold = equivalence_threshold::<T>();
    Ok(EquivalenceReport { budget: label.into(), prompts: prompts.len(), max_rel_diff: worst, threshold, pass: worst < threshold })
}

/// Largest relative logit difference between `parent` under `masks` and
/// the standalone `sub` model over `prompts`.
pub fn compare_paths<T: Scalar>(parent: &HybridModel<T>, masks: &MaskSet<T>, sub: &HybridModel<T>, prompts: &[Vec<usize>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in prompts {
        let masked = parent.logits(masks, p, 1)?.to_f64_vec();
        let sliced = sub.logits_full(p, 1)?.to_f64_vec();
        worst = worst.max(max_relative_diff(&masked, &sliced));
    }
    Ok(worst)
}

/// The same model with every parameter replaced by its global position, so
/// slicing it reveals which parent entries a selection keeps.
fn position_model<T: Scalar>(parent: &HybridModel<T>) -> HybridModel<f64> {
    let mut ids = parent.cast::<f64>();
    let mut next = 0.0;
    for t in &mut ids.tensors {
        for v in t.data_mut() {
            *v = next;
            next += 1.0;
        }
    }
    ids
}

/// Parent positions and values kept by `sel`.
fn kept_entries<T: Scalar>(parent: &HybridModel<T>, ids: &HybridModel<f64>, sel: &Selection) -> Result<Vec<(u64, T)>> {
    let sub = parent.slice(sel)?;
    let sub_ids = ids.slice(sel)?;
    Ok(sub_ids
        .tensors
        .iter()
        .zip(&sub.tensors)
        .flat_map(|(i, v)| i.data().iter().map(|&x| x as u64).zip(v.data().iter().copied()))
        .collect())
}

/// Whether every parameter of `small`'s sub-model appears, with a bitwise
/// equal value, in `large`'s sub-model.
pub fn is_nested<T: Scalar>(parent: &HybridModel<T>, small: &Selection, large: &Selection) -> Result<bool> {
    let ids = position_model(parent);
    let big: BTreeMap<u64, T> = kept_entries(parent, &ids, large)?.into_iter().collect();
    Ok(kept_entries(parent, &ids, small)?
        .iter()
        .all(|(id, v)| big.get(id).is_some_and(|w| w.as_f64().to_bits() == v.as_f64().to_bits())))
}

/// Whether `a`'s retained counts are at most `b`'s on every axis.
pub fn selection_le(a: &Selection, b: &Selection) -> bool {
    use crate::model::LayerSpec::*;
    a.d_e <= b.d_e
        && a.layers.iter().zip(&b.layers).all(|(x, y)| match (x, y) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(Mamba { heads: h1, head_dim: d1 }), Some(Mamba { heads: h2, head_dim: d2 })) => h1 <= h2 && d1 <= d2,
            (Some(Attention { heads: h1, head_dim: d1 }), Some(Attention { heads: h2, head_dim: d2 })) => h1 <= h2 && d1 <= d2,
            (Some(Ffn { hidden: a }), Some(Ffn { hidden: b })) => a <= b,
            _ => false,
        })
}
