//! Activation-based importance scores for every elastic axis and the
//! rankings derived from them.

mod depth;

use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

pub use depth::{nmse, rank_depth, DepthMode, DepthRanking};

use crate::error::{Error, Result};
use crate::model::{GraphMasks, HybridModel, LayerOrder, LayerSpec, Trace};
use crate::numerics::{Scalar, Tape};

/// Indices sorted by descending score; ties keep the lower index first.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Rank `scores` independently inside each of `groups` contiguous ranges.
/// Position `i` of the result stays inside the group of index `i`.
pub fn rank_within_groups(scores: &[f64], groups: usize) -> Vec<usize> {
    let per = scores.len() / groups;
    (0..groups)
        .flat_map(|g| rank_descending(&scores[g * per..(g + 1) * per]).into_iter().map(move |i| g * per + i))
        .collect()
}

/// `acc[i] += Σ_rows |x[row, i]|` for the layer-norm output of one site.
pub fn accumulate_embedding<T: Scalar>(acc: &mut [f64], normed: &[T]) {
    for row in normed.chunks(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.as_f64().abs();
        }
    }
}

/// `acc[i] += Σ_rows |h[row, i]|` for the FFN first-layer output.
pub fn accumulate_ffn<T: Scalar>(acc: &mut [f64], hidden: &[T]) {
    accumulate_embedding(acc, hidden)
}

/// `acc[i] += Σ_rows s[row, i]` (signed) for the Mamba `x` projection.
pub fn accumulate_mamba<T: Scalar>(acc: &mut [f64], proj: &[T]) {
    for row in proj.chunks(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.as_f64();
        }
    }
}

/// `acc[h] += Σ_rows ‖q[row, head h]‖₂` for attention queries.
pub fn accumulate_attention<T: Scalar>(acc: &mut [f64], queries: &[T], head_dim: usize) {
    let heads = acc.len();
    for row in queries.chunks(heads * head_dim) {
        for (h, a) in acc.iter_mut().enumerate() {
            let sq: f64 = row[h * head_dim..(h + 1) * head_dim].iter().map(|v| v.as_f64() * v.as_f64()).sum();
            *a += sq.sqrt();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MambaScores {
    /// `s_d`: norm over heads of the summed projection, per head channel.
    pub channel: Vec<f64>,
    /// `f_h`: norm of head `h` restricted to the top channels.
    pub head: Vec<f64>,
    pub channel_order: Vec<usize>,
    pub head_order: Vec<usize>,
}

/// Channel and group-constrained head ranking from the summed Mamba `x`
/// projection `sum[h * head_dim + d]`.
pub fn score_mamba(sum: &[f64], heads: usize, head_dim: usize, groups: usize, keep_channels: usize) -> Result<MambaScores> {
    if keep_channels == 0 || keep_channels > head_dim {
        return Err(Error::KeepChannels { keep: keep_channels, max: head_dim });
    }
    let at = |h: usize, d: usize| sum[h * head_dim + d];
    let channel: Vec<f64> = (0..head_dim).map(|d| (0..heads).map(|h| at(h, d) * at(h, d)).sum::<f64>().sqrt()).collect();
    let channel_order = rank_descending(&channel);
    let top = &channel_order[..keep_channels];
    let head: Vec<f64> = (0..heads).map(|h| top.iter().map(|&d| at(h, d) * at(h, d)).sum::<f64>().sqrt()).collect();
    let head_order = rank_within_groups(&head, groups);
    Ok(MambaScores { channel, head, channel_order, head_order })
}

/// Raw score vectors accumulated over a calibration set.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub emb: Vec<f64>,
    pub layers: Vec<LayerScores>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerScores {
    /// Signed projection sums, `[heads * head_dim]`.
    Mamba(Vec<f64>),
    Attention(Vec<f64>),
    Ffn(Vec<f64>),
}

/// Width orders plus depth ranking, all as new-to-old index lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub emb: Vec<usize>,
    pub layers: Vec<LayerOrder>,
    /// Layers from most to least important.
    pub depth: Vec<usize>,
}

impl Ranking {
    pub fn identity(model_layers: &[LayerSpec], d_e: usize) -> Self {
        Ranking {
            emb: (0..d_e).collect(),
            layers: model_layers.iter().map(LayerOrder::identity).collect(),
            depth: (0..model_layers.len()).collect(),
        }
    }
}

impl Scores {
    fn zeros(layers: &[LayerSpec], d_e: usize) -> Self {
        Scores {
            emb: vec![0.0; d_e],
            layers: layers
                .iter()
                .map(|l| match *l {
                    LayerSpec::Mamba { heads, head_dim } => LayerScores::Mamba(vec![0.0; heads * head_dim]),
                    LayerSpec::Attention { heads, .. } => LayerScores::Attention(vec![0.0; heads]),
                    LayerSpec::Ffn { hidden } => LayerScores::Ffn(vec![0.0; hidden]),
                })
                .collect(),
        }
    }

    fn vectors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        core::iter::once(&mut self.emb).chain(self.layers.iter_mut().map(|l| match l {
            LayerScores::Mamba(v) | LayerScores::Attention(v) | LayerScores::Ffn(v) => v,
        }))
    }
}

/// Elementwise sum of per-batch partial scores. Contributions to each entry
/// are sorted before adding, so the result does not depend on batch order.
fn reduce(mut partials: Vec<Scores>) -> Scores {
    let mut out = partials.pop().expect("at least one batch");
    let mut rest: Vec<Vec<&mut Vec<f64>>> = partials.iter_mut().map(|p| p.vectors_mut().collect()).collect();
    let mut buf = Vec::with_capacity(rest.len() + 1);
    for (k, dst) in out.vectors_mut().enumerate() {
        for i in 0..dst.len() {
            buf.clear();
            buf.push(dst[i]);
            buf.extend(rest.iter_mut().map(|p| p[k][i]));
            buf.sort_by(f64::total_cmp);
            dst[i] = buf.iter().sum();
        }
    }
    out
}

/// Run forward-only passes over `batches` (each `batch` rows) with full
/// masks and accumulate every axis' raw scores.
pub fn collect_scores<T: Scalar>(model: &HybridModel<T>, batches: &[Vec<usize>], batch: usize) -> Result<Scores> {
    if batches.is_empty() || batches.iter().any(Vec::is_empty) {
        return Err(Error::EmptyCalibration);
    }
    let cfg = &model.config;
    let mut partials = Vec::with_capacity(batches.len());
    for toks in batches {
        let mut part = Scores::zeros(&cfg.layers, cfg.d_e);
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, false);
        let mut trace = Trace::default();
        model.forward(&mut tape, &params, &GraphMasks::none(cfg.n_layers()), toks, batch, Some(&mut trace))?;
        for ((lt, ls), spec) in trace.layers.iter().zip(&mut part.layers).zip(&cfg.layers) {
            let lt = lt.expect("no layer is bypassed without masks");
            accumulate_embedding(&mut part.emb, tape.value(lt.normed).data());
            let inner = tape.value(lt.inner).data();
            match (ls, spec) {
                (LayerScores::Mamba(acc), _) => accumulate_mamba(acc, inner),
                (LayerScores::Attention(acc), LayerSpec::Attention { head_dim, .. }) => accumulate_attention(acc, inner, *head_dim),
                (LayerScores::Ffn(acc), _) => accumulate_ffn(acc, inner),
                _ => unreachable!("scores follow the config"),
            }
        }
        partials.push(part);
    }
    Ok(reduce(partials))
}

/// Turn raw scores into width orders.
pub fn width_orders(scores: &Scores, layers: &[LayerSpec], groups: usize, keep_channels: usize) -> Result<(Vec<usize>, Vec<LayerOrder>)> {
    let emb = rank_descending(&scores.emb);
    let orders = scores
        .layers
        .iter()
        .zip(layers)
        .map(|(s, spec)| {
            Ok(match (s, *spec) {
                (LayerScores::Mamba(sum), LayerSpec::Mamba { heads, head_dim }) => {
                    let m = score_mamba(sum, heads, head_dim, groups, keep_channels)?;
                    LayerOrder::Mamba { heads: m.head_order, channels: m.channel_order }
                }
                (LayerScores::Attention(s), _) => LayerOrder::Attention { heads: rank_descending(s) },
                (LayerScores::Ffn(s), _) => LayerOrder::Ffn { neurons: rank_descending(s) },
                _ => return Err(Error::Config("scores do not match the layer stack".into())),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((emb, orders))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CalibrationConfig {
    /// Number of top head channels used to score Mamba heads.
    pub keep_channels: usize,
    pub depth_mode: DepthMode,
}

/// Everything calibration produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub ranking: Ranking,
    pub scores: Scores,
    pub depth: DepthRanking,
}

/// Score all axes, physically re-sort `model` so every width ranking becomes
/// index order, and rank depth.
pub fn calibrate<T: Scalar>(
    model: &mut HybridModel<T>,
    width_batches: &[Vec<usize>],
    depth_batches: &[Vec<usize>],
    batch: usize,
    cfg: CalibrationConfig,
) -> Result<Calibration> {
    let scores = collect_scores(model, width_batches, batch)?;
    let (emb, layers) = width_orders(&scores, &model.config.layers, model.config.g, cfg.keep_channels)?;
    model.resort(&emb, &layers)?;
    let depth = rank_depth(model, depth_batches, batch, cfg.depth_mode)?;
    let ranking = Ranking { emb, layers, depth: depth.order.clone() };
    Ok(Calibration { ranking, scores, depth })
}
