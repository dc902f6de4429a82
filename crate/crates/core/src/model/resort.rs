use alloc::format;
use alloc::vec::Vec;

use super::config::LayerSpec;
use super::params::{HybridModel, LayerParams};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// New-to-old index order for one layer's elastic axes: position `i` of the
/// re-sorted layer holds what was at index `order[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerOrder {
    Mamba { heads: Vec<usize>, channels: Vec<usize> },
    Attention { heads: Vec<usize> },
    Ffn { neurons: Vec<usize> },
}

impl LayerOrder {
    pub fn identity(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::Mamba { heads, head_dim } => LayerOrder::Mamba { heads: (0..heads).collect(), channels: (0..head_dim).collect() },
            LayerSpec::Attention { heads, .. } => LayerOrder::Attention { heads: (0..heads).collect() },
            LayerSpec::Ffn { hidden } => LayerOrder::Ffn { neurons: (0..hidden).collect() },
        }
    }
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = alloc::vec![false; n];
    p.iter().all(|&i| i < n && !core::mem::replace(&mut seen[i], true))
}

fn permute_rows<T: Scalar>(t: &mut Tensor<T>, perm: &[usize]) {
    let cols = t.numel() / perm.len();
    let old = t.data().to_vec();
    let data = t.data_mut();
    for (i, &src) in perm.iter().enumerate() {
        data[i * cols..(i + 1) * cols].copy_from_slice(&old[src * cols..(src + 1) * cols]);
    }
}

fn permute_cols<T: Scalar>(t: &mut Tensor<T>, perm: &[usize]) {
    let cols = perm.len();
    let old = t.data().to_vec();
    let data = t.data_mut();
    for r in 0..old.len() / cols {
        for (i, &src) in perm.iter().enumerate() {
            data[r * cols + i] = old[r * cols + src];
        }
    }
}

impl<T: Scalar> HybridModel<T> {
    /// Permute parameters in place so that the given orders become index
    /// order. The function computed by the full model is unchanged.
    pub fn resort(&mut self, emb: &[usize], layers: &[LayerOrder]) -> Result<()> {
        let cfg = &self.config;
        if !is_permutation(emb, cfg.d_e) {
            return Err(Error::Config(format!("embedding order is not a permutation of {}", cfg.d_e)));
        }
        if layers.len() != cfg.n_layers() {
            return Err(Error::Config(format!("{} layer orders for {} layers", layers.len(), cfg.n_layers())));
        }
        let mut inner_perms = Vec::with_capacity(layers.len());
        for (j, (order, spec)) in layers.iter().zip(&cfg.layers).enumerate() {
            let bad = |what: &str| Error::Config(format!("layer {j}: invalid {what} order"));
            let inner = match (order, *spec) {
                (LayerOrder::Mamba { heads, channels }, LayerSpec::Mamba { heads: h, head_dim: d }) => {
                    if !is_permutation(heads, h) {
                        return Err(bad("head"));
                    }
                    let per = h / cfg.g;
                    if heads.iter().enumerate().any(|(i, &src)| i / per != src / per) {
                        return Err(bad("head (crosses a group boundary)"));
                    }
                    if !is_permutation(channels, d) {
                        return Err(bad("channel"));
                    }
                    (Some(heads.clone()), heads.iter().flat_map(|&hs| channels.iter().map(move |&c| hs * d + c)).collect())
                }
                (LayerOrder::Attention { heads }, LayerSpec::Attention { heads: h, head_dim: d }) => {
                    if !is_permutation(heads, h) {
                        return Err(bad("head"));
                    }
                    (None, heads.iter().flat_map(|&hs| (0..d).map(move |c| hs * d + c)).collect())
                }
                (LayerOrder::Ffn { neurons }, LayerSpec::Ffn { hidden }) => {
                    if !is_permutation(neurons, hidden) {
                        return Err(bad("neuron"));
                    }
                    (None, neurons.clone())
                }
                _ => return Err(Error::Config(format!("layer {j}: order kind does not match {spec}"))),
            };
            inner_perms.push(inner);
        }

        let layout = self.layout.clone();
        let t = &mut self.tensors;
        permute_cols(&mut t[layout.embed], emb);
        permute_rows(&mut t[layout.lm_head], emb);
        for n in [layout.final_norm.weight, layout.final_norm.bias] {
            permute_rows(&mut t[n], emb);
        }
        for (lp, (head_perm, inner)) in layout.layers.iter().zip(&inner_perms) {
            let norm = lp.norm();
            permute_rows(&mut t[norm.weight], emb);
            permute_rows(&mut t[norm.bias], emb);
            match lp {
                LayerParams::Mamba(m) => {
                    for w in [m.in_z, m.in_x, m.in_b, m.in_c, m.in_dt] {
                        permute_rows(&mut t[w], emb);
                    }
                    permute_cols(&mut t[m.out], emb);
                    permute_cols(&mut t[m.in_z], inner);
                    permute_cols(&mut t[m.in_x], inner);
                    permute_rows(&mut t[m.conv_x], inner);
                    permute_rows(&mut t[m.out_norm], inner);
                    permute_rows(&mut t[m.out], inner);
                    let hp = head_perm.as_ref().expect("Mamba layers carry a head order");
                    permute_cols(&mut t[m.in_dt], hp);
                    permute_rows(&mut t[m.a_log], hp);
                    permute_rows(&mut t[m.d], hp);
                }
                LayerParams::Attention(a) => {
                    for w in [a.q, a.k, a.v] {
                        permute_rows(&mut t[w], emb);
                        permute_cols(&mut t[w], inner);
                    }
                    permute_rows(&mut t[a.o], inner);
                    permute_cols(&mut t[a.o], emb);
                }
                LayerParams::Ffn(f) => {
                    permute_rows(&mut t[f.up], emb);
                    permute_cols(&mut t[f.up], inner);
                    permute_rows(&mut t[f.down], inner);
                    permute_cols(&mut t[f.down], emb);
                }
            }
        }
        Ok(())
    }
}
