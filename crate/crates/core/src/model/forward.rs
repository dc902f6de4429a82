use num_traits::Float as _;
use alloc::vec::Vec;

use super::config::{LayerSpec, NORM_EPS};
use super::masks::{Gate, GraphMasks};
use super::params::{AttentionParams, FfnParams, HybridModel, LayerParams, MambaParams, NormParams};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Var};

/// Activations recorded during a forward pass, for calibration and tests.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Residual stream entering each layer, plus the stream after the last one.
    pub hidden: Vec<Var>,
    /// Per layer, `None` when the layer was bypassed.
    pub layers: Vec<Option<LayerTrace>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    /// Layer-norm output with the layer's affine, before masking.
    pub normed: Var,
    /// Mamba `x` projection, attention queries, or FFN first-layer output,
    /// all before masking.
    pub inner: Var,
}

struct Ctx<'a, T> {
    tape: &'a mut Tape<T>,
    p: &'a [Var],
    emb: Option<Var>,
    batch: usize,
    len: usize,
}

impl<T: Scalar> Ctx<'_, T> {
    fn mask(&mut self, x: Var, m: Option<Var>) -> Result<Var> {
        match m {
            Some(m) => self.tape.mul(x, m),
            None => Ok(x),
        }
    }

    fn norm(&mut self, x: Var, n: NormParams) -> Result<Var> {
        let eps = T::from_f64(NORM_EPS);
        self.tape.layer_norm(x, self.emb, self.p[n.weight], self.p[n.bias], eps)
    }

    fn mamba(&mut self, x: Var, w: &MambaParams, spec: (usize, usize), groups: usize, state: usize, m: Option<Var>, trace: &mut Option<LayerTrace>) -> Result<Var> {
        let (heads, head_dim) = spec;
        let (b, l) = (self.batch, self.len);
        let normed = self.norm(x, w.norm)?;
        let yln = self.mask(normed, self.emb)?;
        let head_mask = match m {
            Some(m) => {
                let idx: Vec<usize> = (0..heads).map(|h| h * head_dim).collect();
                Some(self.tape.gather(m, &idx, &[heads])?)
            }
            None => None,
        };
        let z = self.tape.matmul(yln, self.p[w.in_z])?;
        let z = self.mask(z, m)?;
        let xp = self.tape.matmul(yln, self.p[w.in_x])?;
        *trace = Some(LayerTrace { normed, inner: xp });
        let xs = self.mask(xp, m)?;
        let bp = self.tape.matmul(yln, self.p[w.in_b])?;
        let cp = self.tape.matmul(yln, self.p[w.in_c])?;
        let dt = self.tape.matmul(yln, self.p[w.in_dt])?;
        let dt = self.mask(dt, head_mask)?;

        let xs = self.tape.causal_conv1d(xs, self.p[w.conv_x])?;
        let xs = self.tape.silu(xs);
        let bp = self.tape.causal_conv1d(bp, self.p[w.conv_b])?;
        let bp = self.tape.silu(bp);
        let cp = self.tape.causal_conv1d(cp, self.p[w.conv_c])?;
        let cp = self.tape.silu(cp);
        let dt = self.tape.softplus(dt);
        let a = self.tape.exp(self.p[w.a_log]);
        let a = self.tape.neg(a);

        let xs = self.tape.reshape(xs, &[b, l, heads, head_dim])?;
        let bp = self.tape.reshape(bp, &[b, l, groups, state])?;
        let cp = self.tape.reshape(cp, &[b, l, groups, state])?;
        let y = self.tape.selective_scan(xs, dt, a, bp, cp, self.p[w.d])?;
        let y = self.tape.reshape(y, &[b, l, heads * head_dim])?;
        let gate = self.tape.silu(z);
        let u = self.tape.mul(y, gate)?;
        let u = self.tape.rms_norm(u, m, self.p[w.out_norm], T::from_f64(NORM_EPS))?;
        let u = self.mask(u, m)?;
        let out = self.tape.matmul(u, self.p[w.out])?;
        self.mask(out, self.emb)
    }

    fn attention(&mut self, x: Var, w: &AttentionParams, spec: (usize, usize), m: Option<Var>, trace: &mut Option<LayerTrace>) -> Result<Var> {
        let (heads, head_dim) = spec;
        let (b, l) = (self.batch, self.len);
        let normed = self.norm(x, w.norm)?;
        let yln = self.mask(normed, self.emb)?;
        let q = self.tape.matmul(yln, self.p[w.q])?;
        *trace = Some(LayerTrace { normed, inner: q });
        let split = |ctx: &mut Self, t: Var| -> Result<Var> {
            let t = ctx.mask(t, m)?;
            let t = ctx.tape.reshape(t, &[b, l, heads, head_dim])?;
            let t = ctx.tape.transpose12(t)?;
            ctx.tape.reshape(t, &[b * heads, l, head_dim])
        };
        let q = split(self, q)?;
        let k = self.tape.matmul(yln, self.p[w.k])?;
        let k = split(self, k)?;
        let v = self.tape.matmul(yln, self.p[w.v])?;
        let v = split(self, v)?;
        let scores = self.tape.bmm(q, k, true)?;
        let scores = self.tape.scale(scores, T::from_f64(1.0 / (head_dim as f64).sqrt()));
        let probs = self.tape.softmax(scores, true)?;
        let o = self.tape.bmm(probs, v, false)?;
        let o = self.tape.reshape(o, &[b, heads, l, head_dim])?;
        let o = self.tape.transpose12(o)?;
        let o = self.tape.reshape(o, &[b, l, heads * head_dim])?;
        let o = self.mask(o, m)?;
        let out = self.tape.matmul(o, self.p[w.o])?;
        self.mask(out, self.emb)
    }

    fn ffn(&mut self, x: Var, w: &FfnParams, m: Option<Var>, trace: &mut Option<LayerTrace>) -> Result<Var> {
        let normed = self.norm(x, w.norm)?;
        let yln = self.mask(normed, self.emb)?;
        let h = self.tape.matmul(yln, self.p[w.up])?;
        *trace = Some(LayerTrace { normed, inner: h });
        let h = self.mask(h, m)?;
        let h = self.tape.silu(h);
        let h = self.mask(h, m)?;
        let out = self.tape.matmul(h, self.p[w.down])?;
        self.mask(out, self.emb)
    }
}

impl<T: Scalar> HybridModel<T> {
    /// Masked forward pass to logits `[batch, len, vocab]`. `params` are the
    /// model's tensors bound on `tape` (see [`HybridModel::bind`]).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        masks: &GraphMasks,
        tokens: &[usize],
        batch: usize,
        trace: Option<&mut Trace>,
    ) -> Result<Var> {
        let cfg = &self.config;
        if params.len() != self.tensors.len() {
            return Err(Error::Inventory(alloc::format!("{} bound parameters for {} tensors", params.len(), self.tensors.len())));
        }
        if masks.layers.len() != cfg.n_layers() {
            return Err(Error::Mask(alloc::format!("{} layer masks for {} layers", masks.layers.len(), cfg.n_layers())));
        }
        if batch == 0 || tokens.is_empty() || tokens.len() % batch != 0 {
            return Err(Error::Shape { op: "forward", detail: alloc::format!("{} tokens in {batch} rows", tokens.len()) });
        }
        self.check_graph_masks(tape, masks)?;
        let len = tokens.len() / batch;
        let mut ctx = Ctx { tape, p: params, emb: masks.emb, batch, len };
        let mut local = Trace::default();
        let x = ctx.tape.embedding(params[self.layout.embed], tokens, &[batch, len])?;
        let mut x = ctx.mask(x, masks.emb)?;
        for (j, (spec, lp)) in cfg.layers.iter().zip(&self.layout.layers).enumerate() {
            local.hidden.push(x);
            let lm = masks.layers[j];
            if lm.gate == Gate::Off {
                local.layers.push(None);
                continue;
            }
            let mut lt = None;
            let out = match (spec, lp) {
                (&LayerSpec::Mamba { heads, head_dim }, LayerParams::Mamba(w)) => {
                    ctx.mamba(x, w, (heads, head_dim), cfg.g, cfg.d_s, lm.width, &mut lt)?
                }
                (&LayerSpec::Attention { heads, head_dim }, LayerParams::Attention(w)) => {
                    ctx.attention(x, w, (heads, head_dim), lm.width, &mut lt)?
                }
                (LayerSpec::Ffn { .. }, LayerParams::Ffn(w)) => ctx.ffn(x, w, lm.width, &mut lt)?,
                _ => unreachable!("layout is derived from the config"),
            };
            local.layers.push(lt);
            let out = match lm.gate {
                Gate::Soft(g) => ctx.tape.mul(out, g)?,
                _ => out,
            };
            x = ctx.tape.add(x, out)?;
        }
        local.hidden.push(x);
        let fnorm = ctx.norm(x, self.layout.final_norm)?;
        let fnorm = ctx.mask(fnorm, masks.emb)?;
        let logits = ctx.tape.matmul(fnorm, params[self.layout.lm_head])?;
        if let Some(t) = trace {
            *t = local;
        }
        Ok(logits)
    }

    fn check_graph_masks(&self, tape: &Tape<T>, masks: &GraphMasks) -> Result<()> {
        let cfg = &self.config;
        if let Some(e) = masks.emb {
            if tape.shape(e) != [cfg.d_e] {
                return Err(Error::Mask(alloc::format!("embedding mask shape {:?}, d_e is {}", tape.shape(e), cfg.d_e)));
            }
        }
        for (j, (lm, spec)) in masks.layers.iter().zip(&cfg.layers).enumerate() {
            if let Some(w) = lm.width {
                if tape.shape(w) != [spec.inner_width()] {
                    return Err(Error::Mask(alloc::format!(
                        "layer {j}: width mask shape {:?}, layer width is {}",
                        tape.shape(w),
                        spec.inner_width()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Forward pass without a gradient tape: values only.
    pub fn logits(&self, masks: &super::MaskSet<T>, tokens: &[usize], batch: usize) -> Result<crate::numerics::Tensor<T>> {
        masks.check(&self.config)?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let gm = masks.lift(&mut tape);
        let out = self.forward(&mut tape, &params, &gm, tokens, batch, None)?;
        Ok(tape.value(out).clone())
    }

    /// Unmasked forward pass, values only.
    pub fn logits_full(&self, tokens: &[usize], batch: usize) -> Result<crate::numerics::Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let gm = GraphMasks::none(self.config.n_layers());
        let out = self.forward(&mut tape, &params, &gm, tokens, batch, None)?;
        Ok(tape.value(out).clone())
    }
}
