use alloc::vec::Vec;

use super::config::LayerSpec;
use super::masks::{kept_heads, kept_inner, Selection};
use super::params::{HybridModel, LayerParams};
use crate::error::Result;
use crate::numerics::{Scalar, Tensor};

fn take_1d<T: Scalar>(t: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    Tensor::from_vec(idx.iter().map(|&i| t.data()[i]).collect())
}

fn take_2d<T: Scalar>(t: &Tensor<T>, rows: &[usize], cols: &[usize]) -> Tensor<T> {
    let width = t.shape()[1];
    let src = t.data();
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        out.extend(cols.iter().map(|&c| src[r * width + c]));
    }
    Tensor::new(alloc::vec![rows.len(), cols.len()], out).expect("non-empty selection")
}

impl<T: Scalar> HybridModel<T> {
    /// Copy out the sub-network described by `sel`: a prefix of embedding
    /// channels, prefix widths inside every kept layer, and only the kept
    /// layers. The vocabulary is never sliced.
    pub fn slice(&self, sel: &Selection) -> Result<HybridModel<T>> {
        let cfg = &self.config;
        sel.validate(cfg)?;
        for (j, (s, parent)) in sel.layers.iter().zip(&cfg.layers).enumerate() {
            if let (Some(LayerSpec::Attention { head_dim, .. }), LayerSpec::Attention { head_dim: d, .. }) = (s, parent) {
                if head_dim != d {
                    return Err(crate::error::Error::Mask(alloc::format!(
                        "layer {j}: attention head dim {head_dim} differs from {d}; score scaling makes it unsliceable"
                    )));
                }
            }
        }
        let t = &self.tensors;
        let lay = &self.layout;
        let emb: Vec<usize> = (0..sel.d_e).collect();
        let all = |n: usize| (0..n).collect::<Vec<usize>>();
        let bc = all(cfg.g * cfg.d_s);
        let kernel = all(cfg.conv_kernel);
        let mut out: Vec<(alloc::string::String, Tensor<T>)> = Vec::new();
        let mut push = |name: alloc::string::String, v: Tensor<T>| out.push((name, v));

        push("embed.weight".into(), take_2d(&t[lay.embed], &all(cfg.vocab), &emb));
        for (new_j, &j) in sel.kept_layers().iter().enumerate() {
            let parent = &cfg.layers[j];
            let spec = sel.layers[j].as_ref().expect("kept layer");
            let inner = kept_inner(parent, spec, cfg.g);
            let p = alloc::format!("layers.{new_j}");
            let lp = &lay.layers[j];
            push(alloc::format!("{p}.norm.weight"), take_1d(&t[lp.norm().weight], &emb));
            push(alloc::format!("{p}.norm.bias"), take_1d(&t[lp.norm().bias], &emb));
            match lp {
                LayerParams::Mamba(m) => {
                    let (LayerSpec::Mamba { heads: total, .. }, LayerSpec::Mamba { heads, .. }) = (*parent, *spec) else {
                        unreachable!("validated selection")
                    };
                    let hk = kept_heads(total, heads, cfg.g);
                    push(alloc::format!("{p}.in_z"), take_2d(&t[m.in_z], &emb, &inner));
                    push(alloc::format!("{p}.in_x"), take_2d(&t[m.in_x], &emb, &inner));
                    push(alloc::format!("{p}.in_b"), take_2d(&t[m.in_b], &emb, &bc));
                    push(alloc::format!("{p}.in_c"), take_2d(&t[m.in_c], &emb, &bc));
                    push(alloc::format!("{p}.in_dt"), take_2d(&t[m.in_dt], &emb, &hk));
                    push(alloc::format!("{p}.a_log"), take_1d(&t[m.a_log], &hk));
                    push(alloc::format!("{p}.d"), take_1d(&t[m.d], &hk));
                    push(alloc::format!("{p}.conv_x"), take_2d(&t[m.conv_x], &inner, &kernel));
                    push(alloc::format!("{p}.conv_b"), t[m.conv_b].clone());
                    push(alloc::format!("{p}.conv_c"), t[m.conv_c].clone());
                    push(alloc::format!("{p}.out_norm.weight"), take_1d(&t[m.out_norm], &inner));
                    push(alloc::format!("{p}.out"), take_2d(&t[m.out], &inner, &emb));
                }
                LayerParams::Attention(a) => {
                    push(alloc::format!("{p}.q"), take_2d(&t[a.q], &emb, &inner));
                    push(alloc::format!("{p}.k"), take_2d(&t[a.k], &emb, &inner));
                    push(alloc::format!("{p}.v"), take_2d(&t[a.v], &emb, &inner));
                    push(alloc::format!("{p}.o"), take_2d(&t[a.o], &inner, &emb));
                }
                LayerParams::Ffn(f) => {
                    push(alloc::format!("{p}.up"), take_2d(&t[f.up], &emb, &inner));
                    push(alloc::format!("{p}.down"), take_2d(&t[f.down], &inner, &emb));
                }
            }
        }
        push("final_norm.weight".into(), take_1d(&t[lay.final_norm.weight], &emb));
        push("final_norm.bias".into(), take_1d(&t[lay.final_norm.bias], &emb));
        push("lm_head".into(), take_2d(&t[lay.lm_head], &emb, &all(cfg.vocab)));
        HybridModel::from_named(sel.sliced_config(cfg), out)
    }
}
