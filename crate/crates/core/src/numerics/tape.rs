//! Tape-based reverse-mode graph. Nodes are appended in execution order, which
//! is already a topological order; backward walks the tape once in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, dot, gemm_nn, gemm_nt, log_softmax_row, sigmoid, softmax_row};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, trans_b: bool, batch: usize, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: T },
    AddScalar { a: Var },
    Exp { a: Var },
    Silu { a: Var },
    Softplus { a: Var },
    LeakyRelu { a: Var, slope: T },
    Abs { a: Var },
    Softmax { a: Var },
    LayerNorm { x: Var, mask: Option<Var>, gamma: Var, beta: Var, normed: Vec<T>, rstd: Vec<T>, var: Vec<T>, wsum: T },
    RmsNorm { x: Var, mask: Option<Var>, gamma: Var, normed: Vec<T>, rstd: Vec<T>, ms: Vec<T>, wsum: T },
    CausalConv { x: Var, w: Var, batch: usize, len: usize, ch: usize, width: usize },
    Scan { x: Var, dt: Var, a: Var, b: Var, c: Var, d: Var, dims: ScanDims, states: Vec<T> },
    Reshape { a: Var },
    Transpose12 { a: Var },
    Embedding { table: Var, tokens: Vec<usize> },
    Gather { a: Var, idx: Vec<usize> },
    Sum { a: Var },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    KlDiv { teacher: Var, student: Var, temperature: T, rows: Vec<bool>, lp_t: Vec<T>, lp_s: Vec<T>, row_kl: Vec<T>, count: usize },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub groups: usize,
    pub state: usize,
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } | BatchMatMul { a, b, .. } | Add { a, b } | Mul { a, b } => vec![*a, *b],
            Scale { a, .. }
            | AddScalar { a }
            | Exp { a }
            | Silu { a }
            | Softplus { a }
            | LeakyRelu { a, .. }
            | Abs { a }
            | Softmax { a, .. }
            | Reshape { a }
            | Transpose12 { a }
            | Gather { a, .. }
            | Sum { a } => vec![*a],
            LayerNorm { x, mask, gamma, beta, .. } => {
                let mut v = vec![*x, *gamma, *beta];
                v.extend(mask.iter().copied());
                v
            }
            RmsNorm { x, mask, gamma, .. } => {
                let mut v = vec![*x, *gamma];
                v.extend(mask.iter().copied());
                v
            }
            CausalConv { x, w, .. } => vec![*x, *w],
            Scan { x, dt, a, b, c, d, .. } => vec![*x, *dt, *a, *b, *c, *d],
            Embedding { table, .. } => vec![*table],
            CrossEntropy { logits, .. } => vec![*logits],
            KlDiv { teacher, student, .. } => vec![*teacher, *student],
        }
    }
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

/// True when `b` broadcasts against `a`: a single element, or `b`'s shape equals
/// the trailing dimensions of `a`.
fn broadcasts(a: &[usize], b: &[usize]) -> bool {
    let nb: usize = b.iter().product();
    if nb == 1 {
        return true;
    }
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Recorded computation graph over tensors of element type `T`.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input or parameter tensor. Gradients are reported for leaves created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// `a[..., k] · b[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.last() != Some(&sb[0]) {
            return Err(shape_err("matmul", format!("inner dimension: lhs {sa:?} vs rhs {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, m, k, n }))
    }

    /// Batched `a[bt, m, k] · b[bt, k, n]`, or `· b[bt, n, k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", format!("batch: lhs {sa:?} vs rhs {sb:?}")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(shape_err("bmm", format!("inner dimension: lhs {sa:?} vs rhs {sb:?}")));
        }
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for t in 0..batch {
            let at = &ad[t * m * k..(t + 1) * m * k];
            let bt = &bd[t * k * n..(t + 1) * k * n];
            let ct = &mut out[t * m * n..(t + 1) * m * n];
            if trans_b {
                gemm_nt(at, bt, ct, m, k, n);
            } else {
                gemm_nn(at, bt, ct, m, k, n);
            }
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b, batch, m, k, n }))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcasts(sa, sb) {
            return Err(shape_err(name, format!("cannot broadcast {sb:?} onto {sa:?}")));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let nb = bd.len();
        let out: Vec<T> = ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
        Tensor::new(sa.to_vec(), out)
    }

    /// Elementwise `a + b`, `b` broadcast over leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    /// Elementwise `a ⊙ b`, `b` broadcast over leading dimensions of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let src = self.value(a);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect())
            .expect("unary op preserves shape");
        self.push(value, op)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale { a, c }, |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::AddScalar { a }, |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp { a }, |x| x.exp())
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu { a }, |x| x * sigmoid(x))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus { a }, kernels::softplus)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, Op::LeakyRelu { a, slope }, move |x| if x > T::zero() { x } else { x * slope })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs { a }, |x| x.abs())
    }

    /// Softmax over the last axis. With `causal`, the input is viewed as
    /// `[..., L, L]` and row `i` only normalizes over columns `0..=i`.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().unwrap();
        if causal && (shape.len() < 2 || shape[shape.len() - 2] != n) {
            return Err(shape_err("softmax", format!("causal softmax needs square trailing dims, got {shape:?}")));
        }
        let mut out = self.data(a).to_vec();
        for (r, row) in out.chunks_exact_mut(n).enumerate() {
            let limit = if causal { r % n + 1 } else { n };
            softmax_row(row, limit);
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a }))
    }

    fn check_norm_vec(&self, name: &'static str, v: Var, d: usize) -> Result<()> {
        if self.shape(v) != [d] {
            return Err(shape_err(name, format!("expected [{d}], got {:?}", self.shape(v))));
        }
        Ok(())
    }

    /// Layer norm over the last axis. When `mask` is given, mean and variance
    /// are weighted by the mask values, so channels with weight zero do not
    /// enter the statistics.
    pub fn layer_norm(&mut self, x: Var, mask: Option<Var>, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        self.check_norm_vec("layer_norm", gamma, d)?;
        self.check_norm_vec("layer_norm", beta, d)?;
        if let Some(m) = mask {
            self.check_norm_vec("layer_norm", m, d)?;
        }
        let ones;
        let w: &[T] = match mask {
            Some(m) => self.data(m),
            None => {
                ones = vec![T::one(); d];
                &ones
            }
        };
        let wsum: T = w.iter().copied().sum();
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = xd.len() / d;
        let mut normed = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut var = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut mean = T::zero();
            for (&v, &wv) in row.iter().zip(w) {
                mean = mean + wv * v;
            }
            mean = mean / wsum;
            let mut vr = T::zero();
            for (&v, &wv) in row.iter().zip(w) {
                vr = vr + wv * (v - mean) * (v - mean);
            }
            vr = vr / wsum;
            let rs = T::one() / (vr + eps).sqrt();
            rstd[r] = rs;
            var[r] = vr;
            for i in 0..d {
                let nv = (row[i] - mean) * rs;
                normed[r * d + i] = nv;
                out[r * d + i] = nv * gd[i] + bd[i];
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::LayerNorm { x, mask, gamma, beta, normed, rstd, var, wsum }))
    }

    /// RMS norm over the last axis with optional mask-weighted mean square.
    pub fn rms_norm(&mut self, x: Var, mask: Option<Var>, gamma: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        self.check_norm_vec("rms_norm", gamma, d)?;
        if let Some(m) = mask {
            self.check_norm_vec("rms_norm", m, d)?;
        }
        let ones;
        let w: &[T] = match mask {
            Some(m) => self.data(m),
            None => {
                ones = vec![T::one(); d];
                &ones
            }
        };
        let wsum: T = w.iter().copied().sum();
        let (xd, gd) = (self.data(x), self.data(gamma));
        let rows = xd.len() / d;
        let mut normed = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut msv = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut ms = T::zero();
            for (&v, &wv) in row.iter().zip(w) {
                ms = ms + wv * v * v;
            }
            ms = ms / wsum;
            let rs = T::one() / (ms + eps).sqrt();
            rstd[r] = rs;
            msv[r] = ms;
            for i in 0..d {
                let nv = row[i] * rs;
                normed[r * d + i] = nv;
                out[r * d + i] = nv * gd[i];
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::RmsNorm { x, mask, gamma, normed, rstd, ms: msv, wsum }))
    }

    /// Depthwise causal convolution: `x[B, L, C]`, kernel `w[C, K]`,
    /// `y[t, c] = Σ_j w[c, j] · x[t − K + 1 + j, c]` with zero left padding.
    pub fn causal_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 2 || sw[0] != sx[2] {
            return Err(shape_err("causal_conv1d", format!("channels: input {sx:?} vs kernel {sw:?}")));
        }
        let (batch, len, ch, width) = (sx[0], sx[1], sx[2], sw[1]);
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for t in 0..len {
                let orow = &mut out[(b * len + t) * ch..(b * len + t + 1) * ch];
                for j in 0..width {
                    let src = t as isize - (width - 1 - j) as isize;
                    if src < 0 {
                        continue;
                    }
                    let xrow = &xd[(b * len + src as usize) * ch..(b * len + src as usize + 1) * ch];
                    for c in 0..ch {
                        orow[c] = orow[c] + wd[c * width + j] * xrow[c];
                    }
                }
            }
        }
        let value = Tensor::new(sx, out)?;
        Ok(self.push(value, Op::CausalConv { x, w, batch, len, ch, width }))
    }

    /// Scalar-decay selective scan, one recurrence per head:
    /// `h_t = exp(dt_t·a)·h_{t−1} + dt_t·(x_t ⊗ B_t)`, `y_t = h_t·C_t + d·x_t`.
    ///
    /// Shapes: `x[B,L,H,P]`, `dt[B,L,H]`, `a[H]`, `b[B,L,G,N]`, `c[B,L,G,N]`,
    /// `d[H]`. Head `h` reads group `h / (H/G)`.
    pub fn selective_scan(&mut self, x: Var, dt: Var, a: Var, b: Var, c: Var, d: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 4 {
            return Err(shape_err("selective_scan", format!("x must be [B,L,H,P], got {sx:?}")));
        }
        let (batch, len, heads, head_dim) = (sx[0], sx[1], sx[2], sx[3]);
        let sb = self.shape(b).to_vec();
        if sb.len() != 4 || sb[0] != batch || sb[1] != len {
            return Err(shape_err("selective_scan", format!("B must be [B,L,G,N], got {sb:?}")));
        }
        let (groups, state) = (sb[2], sb[3]);
        if groups == 0 || heads % groups != 0 {
            return Err(shape_err("selective_scan", format!("heads {heads} not divisible by groups {groups}")));
        }
        if self.shape(c) != sb.as_slice() {
            return Err(shape_err("selective_scan", format!("C {:?} must match B {sb:?}", self.shape(c))));
        }
        if self.shape(dt) != [batch, len, heads] {
            return Err(shape_err("selective_scan", format!("dt must be [{batch},{len},{heads}], got {:?}", self.shape(dt))));
        }
        for (name, v) in [("a", a), ("d", d)] {
            if self.shape(v) != [heads] {
                return Err(shape_err("selective_scan", format!("{name} must be [{heads}], got {:?}", self.shape(v))));
            }
        }
        let dims = ScanDims { batch, len, heads, head_dim, groups, state };
        let (xd, dtd, ad, bd, cd, dd) =
            (self.data(x), self.data(dt), self.data(a), self.data(b), self.data(c), self.data(d));
        let hpg = heads / groups;
        let hs = head_dim * state;
        let mut states = vec![T::zero(); batch * len * heads * hs];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..batch {
            for h in 0..heads {
                let g = h / hpg;
                for t in 0..len {
                    let bl = bi * len + t;
                    let dtv = dtd[bl * heads + h];
                    let decay = (dtv * ad[h]).exp();
                    let bvec = &bd[(bl * groups + g) * state..(bl * groups + g + 1) * state];
                    let cvec = &cd[(bl * groups + g) * state..(bl * groups + g + 1) * state];
                    let xrow = &xd[(bl * heads + h) * head_dim..(bl * heads + h + 1) * head_dim];
                    let cur = (bl * heads + h) * hs;
                    let (done, rest) = states.split_at_mut(cur);
                    let now = &mut rest[..hs];
                    for p in 0..head_dim {
                        let drive = dtv * xrow[p];
                        let row = &mut now[p * state..(p + 1) * state];
                        if t == 0 {
                            for (hv, &bv) in row.iter_mut().zip(bvec) {
                                *hv = drive * bv;
                            }
                        } else {
                            let prev = &done[cur - heads * hs + p * state..cur - heads * hs + (p + 1) * state];
                            for ((hv, &pv), &bv) in row.iter_mut().zip(prev).zip(bvec) {
                                *hv = decay * pv + drive * bv;
                            }
                        }
                        out[(bl * heads + h) * head_dim + p] = dot(cvec, row) + dd[h] * xrow[p];
                    }
                }
            }
        }
        let value = Tensor::new(sx, out)?;
        Ok(self.push(value, Op::Scan { x, dt, a, b, c, d, dims, states }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { a }))
    }

    /// `[A, B, C, D] → [A, C, B, D]`.
    pub fn transpose12(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(shape_err("transpose12", format!("expected rank 4, got {s:?}")));
        }
        let src = self.data(a);
        let mut out = vec![T::zero(); src.len()];
        transpose12_into(src, &mut out, [s[0], s[1], s[2], s[3]]);
        let value = Tensor::new(vec![s[0], s[2], s[1], s[3]], out)?;
        Ok(self.push(value, Op::Transpose12 { a }))
    }

    /// Row lookup `table[V, d]` at `tokens`; output shape `lead ++ [d]`.
    pub fn embedding(&mut self, table: Var, tokens: &[usize], lead: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || lead.iter().product::<usize>() != tokens.len() {
            return Err(shape_err("embedding", format!("table {st:?}, {} tokens for lead {lead:?}", tokens.len())));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = tokens.iter().find(|&&t| t >= v) {
            return Err(shape_err("embedding", format!("token {bad} out of vocabulary {v}")));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            out.extend_from_slice(&td[t * d..(t + 1) * d]);
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Embedding { table, tokens: tokens.to_vec() }))
    }

    /// Flat gather `out[i] = a[idx[i]]` reshaped to `shape`.
    pub fn gather(&mut self, a: Var, idx: &[usize], shape: &[usize]) -> Result<Var> {
        let n = self.value(a).numel();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of range {n}")));
        }
        let src = self.data(a);
        let out: Vec<T> = idx.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape.to_vec(), out)?;
        Ok(self.push(value, Op::Gather { a, idx: idx.to_vec() }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.data(a).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { a })
    }

    /// Mean next-token negative log-likelihood of `logits[..., V]` over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let v = *shape.last().unwrap();
        let rows = self.value(logits).numel() / v;
        if targets.len() != rows {
            return Err(shape_err("cross_entropy", format!("{} targets for {rows} rows", targets.len())));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::AllPadding);
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(shape_err("cross_entropy", format!("target {bad} out of vocabulary {v}")));
        }
        let ld = self.data(logits);
        let mut probs = vec![T::zero(); ld.len()];
        let mut total = T::zero();
        for (r, tgt) in targets.iter().enumerate() {
            let lp = &mut probs[r * v..(r + 1) * v];
            log_softmax_row(&ld[r * v..(r + 1) * v], lp);
            if let Some(t) = tgt {
                total = total - lp[*t];
            }
            for p in lp.iter_mut() {
                *p = p.exp();
            }
        }
        let loss = total / T::from_f64(count as f64);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    /// Forward KL `D_KL(p_teacher ‖ p_student)` of temperature-softened
    /// distributions, averaged over the rows selected by `rows` (all when `None`).
    pub fn kl_div(&mut self, teacher: Var, student: Var, temperature: T, rows: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(student).to_vec();
        if self.shape(teacher) != shape.as_slice() {
            return Err(shape_err("kl_div", format!("teacher {:?} vs student {shape:?}", self.shape(teacher))));
        }
        let v = *shape.last().unwrap();
        let nrows = self.value(student).numel() / v;
        let rows: Vec<bool> = match rows {
            Some(r) if r.len() != nrows => {
                return Err(shape_err("kl_div", format!("{} row flags for {nrows} rows", r.len())))
            }
            Some(r) => r.to_vec(),
            None => vec![true; nrows],
        };
        let count = rows.iter().filter(|&&r| r).count();
        if count == 0 {
            return Err(Error::AllPadding);
        }
        let inv_t = T::one() / temperature;
        let (td, sd) = (self.data(teacher), self.data(student));
        let mut lp_t = vec![T::zero(); td.len()];
        let mut lp_s = vec![T::zero(); sd.len()];
        let mut row_kl = vec![T::zero(); nrows];
        let mut scaled = vec![T::zero(); v];
        let mut total = T::zero();
        for r in 0..nrows {
            if !rows[r] {
                continue;
            }
            let span = r * v..(r + 1) * v;
            for (o, &x) in scaled.iter_mut().zip(&td[span.clone()]) {
                *o = x * inv_t;
            }
            log_softmax_row(&scaled, &mut lp_t[span.clone()]);
            for (o, &x) in scaled.iter_mut().zip(&sd[span.clone()]) {
                *o = x * inv_t;
            }
            log_softmax_row(&scaled, &mut lp_s[span.clone()]);
            let mut kl = T::zero();
            for i in span.clone() {
                let (lt, ls) = (lp_t[i], lp_s[i]);
                let pt = lt.exp();
                kl = kl + pt * (lt - ls);
            }
            row_kl[r] = kl;
            total = total + kl;
        }
        let loss = total / T::from_f64(count as f64);
        let op = Op::KlDiv { teacher, student, temperature, rows, lp_t, lp_s, row_kl, count };
        Ok(self.push(Tensor::scalar(loss), op))
    }
}

pub(crate) fn transpose12_into<T: Copy>(src: &[T], out: &mut [T], s: [usize; 4]) {
    let [a, b, c, d] = s;
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let from = ((i * b + j) * c + k) * d;
                let to = ((i * c + k) * b + j) * d;
                out[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
}
