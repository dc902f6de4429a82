use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Gate, GraphMasks, HybridModel};
use crate::numerics::{Scalar, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthMode {
    /// Score every layer by its single ablation.
    SinglePass,
    /// Greedily remove the least harmful layer on top of earlier removals.
    Iterative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthRanking {
    /// Layers from most to least important.
    pub order: Vec<usize>,
    /// Layers in the order they were removed (least important first).
    pub removal: Vec<usize>,
    /// Normalized error recorded for each removal (single-pass: the layer's
    /// own ablation score).
    pub errors: Vec<f64>,
}

/// `Σ(full − other)² / Σ full²`.
pub fn nmse(full: &[f64], other: &[f64]) -> f64 {
    let num: f64 = full.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = full.iter().map(|a| a * a).sum();
    num / den
}

fn logits_without<T: Scalar>(model: &HybridModel<T>, removed: &[bool], batches: &[Vec<usize>], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for toks in batches {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, false);
        let mut masks = GraphMasks::none(model.config.n_layers());
        for (lm, &r) in masks.layers.iter_mut().zip(removed) {
            if r {
                lm.gate = Gate::Off;
            }
        }
        let logits = model.forward(&mut tape, &params, &masks, toks, batch, None)?;
        out.extend(tape.value(logits).data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Rank layers by how much removing them perturbs the full model's logits.
pub fn rank_depth<T: Scalar>(model: &HybridModel<T>, batches: &[Vec<usize>], batch: usize, mode: DepthMode) -> Result<DepthRanking> {
    let n = model.config.n_layers();
    if batches.is_empty() || batches.iter().any(Vec::is_empty) {
        return Err(Error::EmptyCalibration);
    }
    if n < 2 {
        return Err(Error::Config("depth ranking needs at least two layers".into()));
    }
    let full = logits_without(model, &vec![false; n], batches, batch)?;
    let mut removed = vec![false; n];
    let mut removal = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    match mode {
        DepthMode::SinglePass => {
            let scores = (0..n)
                .map(|j| {
                    removed[j] = true;
                    let e = logits_without(model, &removed, batches, batch).map(|l| nmse(&full, &l));
                    removed[j] = false;
                    e
                })
                .collect::<Result<Vec<f64>>>()?;
            removal = (0..n).collect();
            removal.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            errors = removal.iter().map(|&j| scores[j]).collect();
        }
        DepthMode::Iterative => {
            for _ in 0..n {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..n {
                    if removed[j] {
                        continue;
                    }
                    removed[j] = true;
                    let e = nmse(&full, &logits_without(model, &removed, batches, batch)?);
                    removed[j] = false;
                    if best.is_none_or(|(_, b)| e < b) {
                        best = Some((j, e));
                    }
                }
                let (j, e) = best.expect("a layer remains");
                removed[j] = true;
                removal.push(j);
                errors.push(e);
            }
        }
    }
    let order = removal.iter().rev().copied().collect();
    Ok(DepthRanking { order, removal, errors })
}

