use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{LayerSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Retained widths of a sub-network: embedding channels plus one entry per
/// layer of the parent, `None` for layers removed by depth selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub d_e: usize,
    pub layers: Vec<Option<LayerSpec>>,
}

impl Selection {
    pub fn full(cfg: &ModelConfig) -> Self {
        Selection { d_e: cfg.d_e, layers: cfg.layers.iter().copied().map(Some).collect() }
    }

    /// Check that every retained width fits inside the parent and keeps the
    /// Mamba group structure.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.layers.len() {
            return Err(Error::Mask(format!("selection covers {} layers, model has {}", self.layers.len(), cfg.layers.len())));
        }
        if self.d_e == 0 || self.d_e > cfg.d_e {
            return Err(Error::CountExceeds { axis: "emb", count: self.d_e, max: cfg.d_e });
        }
        for (j, (sel, full)) in self.layers.iter().zip(&cfg.layers).enumerate() {
            let Some(sel) = sel else { continue };
            let fits = match (*sel, *full) {
                (LayerSpec::Mamba { heads, head_dim }, LayerSpec::Mamba { heads: h, head_dim: d }) => {
                    heads >= cfg.g && heads <= h && heads % cfg.g == 0 && head_dim >= 1 && head_dim <= d
                }
                (LayerSpec::Attention { heads, head_dim }, LayerSpec::Attention { heads: h, head_dim: d }) => {
                    heads >= 1 && heads <= h && head_dim >= 1 && head_dim <= d
                }
                (LayerSpec::Ffn { hidden }, LayerSpec::Ffn { hidden: h }) => hidden >= 1 && hidden <= h,
                _ => false,
            };
            if !fits {
                return Err(Error::Mask(format!("layer {j}: {sel} does not fit inside {full}")));
            }
        }
        Ok(())
    }

    /// Config of the physically sliced model.
    pub fn sliced_config(&self, cfg: &ModelConfig) -> ModelConfig {
        ModelConfig {
            d_e: self.d_e,
            g: cfg.g,
            d_s: cfg.d_s,
            vocab: cfg.vocab,
            conv_kernel: cfg.conv_kernel,
            layers: self.layers.iter().flatten().copied().collect(),
        }
    }

    /// Indices of parent layers that survive depth selection.
    pub fn kept_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&j| self.layers[j].is_some()).collect()
    }
}

/// Retained inner channel indices of a layer under a prefix selection, in
/// the parent's inner layout. Mamba heads are kept as a prefix within each
/// group, channels as a prefix within each kept head.
pub fn kept_inner(parent: &LayerSpec, sel: &LayerSpec, groups: usize) -> Vec<usize> {
    match (*parent, *sel) {
        (LayerSpec::Mamba { heads: h, head_dim: d }, LayerSpec::Mamba { heads, head_dim }) => {
            kept_heads(h, heads, groups)
                .into_iter()
                .flat_map(|hd| (0..head_dim).map(move |c| hd * d + c))
                .collect()
        }
        (LayerSpec::Attention { head_dim: d, .. }, LayerSpec::Attention { heads, head_dim }) => {
            (0..heads).flat_map(|hd| (0..head_dim).map(move |c| hd * d + c)).collect()
        }
        (LayerSpec::Ffn { .. }, LayerSpec::Ffn { hidden }) => (0..hidden).collect(),
        _ => Vec::new(),
    }
}

/// Kept Mamba heads: the first `heads / groups` heads of every group.
pub fn kept_heads(total: usize, heads: usize, groups: usize) -> Vec<usize> {
    let per = total / groups;
    let keep = heads / groups;
    (0..groups).flat_map(|g| (0..keep).map(move |i| g * per + i)).collect()
}

/// Concrete masks: embedding channels, one inner-width mask per layer and a
/// depth gate per layer. Values are 0/1 for discrete selections and may be
/// fractional for soft masks.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet<T> {
    pub emb: Tensor<T>,
    pub layers: Vec<Tensor<T>>,
    pub gamma: Vec<T>,
}

impl<T: Scalar> MaskSet<T> {
    pub fn full(cfg: &ModelConfig) -> Self {
        Self::from_selection(cfg, &Selection::full(cfg)).expect("full selection is valid")
    }

    pub fn from_selection(cfg: &ModelConfig, sel: &Selection) -> Result<Self> {
        sel.validate(cfg)?;
        let mut emb = vec![T::zero(); cfg.d_e];
        emb[..sel.d_e].iter_mut().for_each(|v| *v = T::one());
        let mut layers = Vec::with_capacity(cfg.layers.len());
        let mut gamma = Vec::with_capacity(cfg.layers.len());
        for (parent, s) in cfg.layers.iter().zip(&sel.layers) {
            let mut m = vec![T::zero(); parent.inner_width()];
            match s {
                Some(s) => {
                    for i in kept_inner(parent, s, cfg.g) {
                        m[i] = T::one();
                    }
                    gamma.push(T::one());
                }
                None => {
                    m.iter_mut().for_each(|v| *v = T::one());
                    gamma.push(T::zero());
                }
            }
            layers.push(Tensor::from_vec(m));
        }
        Ok(MaskSet { emb: Tensor::from_vec(emb), layers, gamma })
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.emb.numel() != cfg.d_e {
            return Err(Error::Mask(format!("embedding mask has {} entries, d_e is {}", self.emb.numel(), cfg.d_e)));
        }
        if self.layers.len() != cfg.layers.len() || self.gamma.len() != cfg.layers.len() {
            return Err(Error::Mask(format!(
                "{} width masks and {} gates for {} layers",
                self.layers.len(),
                self.gamma.len(),
                cfg.layers.len()
            )));
        }
        for (j, (m, l)) in self.layers.iter().zip(&cfg.layers).enumerate() {
            if m.numel() != l.inner_width() {
                return Err(Error::Mask(format!("layer {j}: mask has {} entries, layer width is {}", m.numel(), l.inner_width())));
            }
        }
        Ok(())
    }

    /// Place the masks on the tape as constants.
    pub fn lift(&self, tape: &mut Tape<T>) -> GraphMasks {
        GraphMasks {
            emb: Some(tape.constant(self.emb.clone())),
            layers: self
                .layers
                .iter()
                .zip(&self.gamma)
                .map(|(m, &g)| LayerMask {
                    width: Some(tape.constant(m.clone())),
                    gate: if g == T::one() {
                        Gate::On
                    } else if g == T::zero() {
                        Gate::Off
                    } else {
                        Gate::Soft(tape.constant(Tensor::scalar(g)))
                    },
                })
                .collect(),
        }
    }
}

/// Depth gate of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    On,
    /// Layer bypassed; the residual stream passes through unchanged.
    Off,
    /// Scalar multiplier on the layer's output.
    Soft(Var),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerMask {
    pub width: Option<Var>,
    pub gate: Gate,
}

/// Masks as tape variables; `None` means "all ones" and skips the multiply.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphMasks {
    pub emb: Option<Var>,
    pub layers: Vec<LayerMask>,
}

impl GraphMasks {
    pub fn none(n_layers: usize) -> Self {
        GraphMasks { emb: None, layers: vec![LayerMask { width: None, gate: Gate::On }; n_layers] }
    }
}

/// Structural check of a binary Mamba inner mask: the same number of heads on
/// in every group and the same channel pattern in every active head.
pub fn mamba_mask_is_group_uniform<T: Scalar>(mask: &[T], heads: usize, head_dim: usize, groups: usize) -> bool {
    let head_on = |h: usize| mask[h * head_dim..(h + 1) * head_dim].iter().any(|&v| v != T::zero());
    let per = heads / groups;
    let counts: Vec<usize> = (0..groups).map(|g| (g * per..(g + 1) * per).filter(|&h| head_on(h)).count()).collect();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return false;
    }
    let active: Vec<usize> = (0..heads).filter(|&h| head_on(h)).collect();
    active.windows(2).all(|w| {
        mask[w[0] * head_dim..(w[0] + 1) * head_dim] == mask[w[1] * head_dim..(w[1] + 1) * head_dim]
    })
}
