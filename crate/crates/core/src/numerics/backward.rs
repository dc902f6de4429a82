use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn, sigmoid};
use super::tape::{transpose12_into, Op, Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Leaf gradients produced by [`Tape::backward`]. Only leaves created with
/// `requires_grad` appear here.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn contains(&self, v: Var) -> bool {
        self.get(v).is_some()
    }

    /// Vars that received a gradient, in tape order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.grads.iter().enumerate().filter(|(_, g)| g.is_some()).map(|(i, _)| Var(i))
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from a scalar `loss`. Each recorded node is visited once;
    /// gradients reaching a leaf accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != [1] {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                grads[i] = None;
            } else if grads[i].is_none() && i <= loss.0 {
                grads[i] = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.wants(a) {
                    let bd = self.val(b).data();
                    gemm_nt(g, bd, slot(grads, a, m * k), m, n, k);
                }
                if self.wants(b) {
                    let ad = self.val(a).data();
                    gemm_tn(ad, g, slot(grads, b, k * n), m, k, n);
                }
            }
            &Op::BatchMatMul { a, b, trans_b, batch, m, k, n } => {
                let (ad, bd) = (self.val(a).data(), self.val(b).data());
                if self.wants(a) {
                    let da = slot(grads, a, batch * m * k);
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &bd[t * k * n..(t + 1) * k * n];
                        let dat = &mut da[t * m * k..(t + 1) * m * k];
                        if trans_b {
                            gemm_nn(gt, bt, dat, m, n, k);
                        } else {
                            gemm_nt(gt, bt, dat, m, n, k);
                        }
                    }
                }
                if self.wants(b) {
                    let db = slot(grads, b, batch * k * n);
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &ad[t * m * k..(t + 1) * m * k];
                        let dbt = &mut db[t * k * n..(t + 1) * k * n];
                        if trans_b {
                            gemm_tn(gt, at, dbt, m, n, k);
                        } else {
                            gemm_tn(at, gt, dbt, m, k, n);
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                if self.wants(a) {
                    for (d, &gv) in slot(grads, a, g.len()).iter_mut().zip(g) {
                        *d = *d + gv;
                    }
                }
                if self.wants(b) {
                    let nb = self.val(b).numel();
                    let db = slot(grads, b, nb);
                    for (j, &gv) in g.iter().enumerate() {
                        db[j % nb] = db[j % nb] + gv;
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (ad, bd) = (self.val(a).data(), self.val(b).data());
                let nb = bd.len();
                if self.wants(a) {
                    let da = slot(grads, a, g.len());
                    for (j, &gv) in g.iter().enumerate() {
                        da[j] = da[j] + gv * bd[j % nb];
                    }
                }
                if self.wants(b) {
                    let db = slot(grads, b, nb);
                    for (j, &gv) in g.iter().enumerate() {
                        db[j % nb] = db[j % nb] + gv * ad[j];
                    }
                }
            }
            &Op::Scale { a, c } => {
                for (d, &gv) in slot(grads, a, g.len()).iter_mut().zip(g) {
                    *d = *d + c * gv;
                }
            }
            &Op::AddScalar { a } => {
                for (d, &gv) in slot(grads, a, g.len()).iter_mut().zip(g) {
                    *d = *d + gv;
                }
            }
            &Op::Exp { a } => {
                let od = out.data();
                for ((d, &gv), &o) in slot(grads, a, g.len()).iter_mut().zip(g).zip(od) {
                    *d = *d + gv * o;
                }
            }
            &Op::Silu { a } => {
                let xd = self.val(a).data();
                for ((d, &gv), &x) in slot(grads, a, g.len()).iter_mut().zip(g).zip(xd) {
                    let s = sigmoid(x);
                    *d = *d + gv * s * (T::one() + x * (T::one() - s));
                }
            }
            &Op::Softplus { a } => {
                let xd = self.val(a).data();
                for ((d, &gv), &x) in slot(grads, a, g.len()).iter_mut().zip(g).zip(xd) {
                    *d = *d + gv * sigmoid(x);
                }
            }
            &Op::LeakyRelu { a, slope } => {
                let xd = self.val(a).data();
                for ((d, &gv), &x) in slot(grads, a, g.len()).iter_mut().zip(g).zip(xd) {
                    *d = *d + if x > T::zero() { gv } else { gv * slope };
                }
            }
            &Op::Abs { a } => {
                let xd = self.val(a).data();
                for ((d, &gv), &x) in slot(grads, a, g.len()).iter_mut().zip(g).zip(xd) {
                    let s = if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *d = *d + gv * s;
                }
            }
            &Op::Softmax { a, .. } => {
                let n = *out.shape().last().unwrap();
                let pd = out.data();
                let da = slot(grads, a, g.len());
                for r in 0..pd.len() / n {
                    let (p, gr) = (&pd[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let s = dot(p, gr);
                    for j in 0..n {
                        da[r * n + j] = da[r * n + j] + p[j] * (gr[j] - s);
                    }
                }
            }
            Op::LayerNorm { x, mask, gamma, beta, normed, rstd, var, wsum } => {
                let d = *out.shape().last().unwrap();
                let rows = normed.len() / d;
                let gd = self.val(*gamma).data();
                let ones = vec![T::one(); d];
                let w = mask.map(|m| self.val(m).data()).unwrap_or(&ones);
                let s = *wsum;
                let half = T::from_f64(0.5);
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                let mut dx = vec![T::zero(); normed.len()];
                let mut dw = vec![T::zero(); d];
                let mut dn = vec![T::zero(); d];
                for r in 0..rows {
                    let nr = &normed[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut sum_dn = T::zero();
                    let mut sum_dnn = T::zero();
                    for k in 0..d {
                        dg[k] = dg[k] + gr[k] * nr[k];
                        db[k] = db[k] + gr[k];
                        dn[k] = gr[k] * gd[k];
                        sum_dn = sum_dn + dn[k];
                        sum_dnn = sum_dnn + dn[k] * nr[k];
                    }
                    let rs = rstd[r];
                    let vr2 = var[r] * rs * rs;
                    for k in 0..d {
                        let wk = w[k] / s;
                        dx[r * d + k] = rs * (dn[k] - wk * sum_dn - wk * nr[k] * sum_dnn);
                        dw[k] = dw[k] - (nr[k] * sum_dn + half * (nr[k] * nr[k] - vr2) * sum_dnn) / s;
                    }
                }
                accumulate(grads, self, *x, &dx);
                accumulate(grads, self, *gamma, &dg);
                accumulate(grads, self, *beta, &db);
                if let Some(m) = mask {
                    accumulate(grads, self, *m, &dw);
                }
            }
            Op::RmsNorm { x, mask, gamma, normed, rstd, ms, wsum } => {
                let d = *out.shape().last().unwrap();
                let rows = normed.len() / d;
                let gd = self.val(*gamma).data();
                let ones = vec![T::one(); d];
                let w = mask.map(|m| self.val(m).data()).unwrap_or(&ones);
                let s = *wsum;
                let half = T::from_f64(0.5);
                let mut dg = vec![T::zero(); d];
                let mut dx = vec![T::zero(); normed.len()];
                let mut dw = vec![T::zero(); d];
                let mut dn = vec![T::zero(); d];
                for r in 0..rows {
                    let nr = &normed[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut sum_dnn = T::zero();
                    for k in 0..d {
                        dg[k] = dg[k] + gr[k] * nr[k];
                        dn[k] = gr[k] * gd[k];
                        sum_dnn = sum_dnn + dn[k] * nr[k];
                    }
                    let rs = rstd[r];
                    let msr2 = ms[r] * rs * rs;
                    for k in 0..d {
                        dx[r * d + k] = rs * (dn[k] - (w[k] / s) * nr[k] * sum_dnn);
                        dw[k] = dw[k] - half * (nr[k] * nr[k] - msr2) * sum_dnn / s;
                    }
                }
                accumulate(grads, self, *x, &dx);
                accumulate(grads, self, *gamma, &dg);
                if let Some(m) = mask {
                    accumulate(grads, self, *m, &dw);
                }
            }
            &Op::CausalConv { x, w, batch, len, ch, width } => {
                let (xd, wd) = (self.val(x).data(), self.val(w).data());
                let mut dx = vec![T::zero(); xd.len()];
                let mut dw = vec![T::zero(); wd.len()];
                for b in 0..batch {
                    for t in 0..len {
                        let grow = &g[(b * len + t) * ch..(b * len + t + 1) * ch];
                        for j in 0..width {
                            let src = t as isize - (width - 1 - j) as isize;
                            if src < 0 {
                                continue;
                            }
                            let base = (b * len + src as usize) * ch;
                            for c in 0..ch {
                                dx[base + c] = dx[base + c] + wd[c * width + j] * grow[c];
                                dw[c * width + j] = dw[c * width + j] + grow[c] * xd[base + c];
                            }
                        }
                    }
                }
                accumulate(grads, self, x, &dx);
                accumulate(grads, self, w, &dw);
            }
            Op::Scan { x, dt, a, b, c, d, dims, states } => {
                self.scan_backward([*x, *dt, *a, *b, *c, *d], *dims, states, g, grads);
            }
            &Op::Reshape { a } => accumulate(grads, self, a, g),
            &Op::Transpose12 { a } => {
                let s = out.shape();
                let mut back = vec![T::zero(); g.len()];
                transpose12_into(g, &mut back, [s[0], s[1], s[2], s[3]]);
                accumulate(grads, self, a, &back);
            }
            Op::Embedding { table, tokens } => {
                let n = self.val(*table).numel();
                let dcols = self.val(*table).shape()[1];
                let dt = slot(grads, *table, n);
                for (r, &t) in tokens.iter().enumerate() {
                    let grow = &g[r * dcols..(r + 1) * dcols];
                    for (dv, &gv) in dt[t * dcols..(t + 1) * dcols].iter_mut().zip(grow) {
                        *dv = *dv + gv;
                    }
                }
            }
            Op::Gather { a, idx } => {
                let n = self.val(*a).numel();
                let da = slot(grads, *a, n);
                for (&j, &gv) in idx.iter().zip(g) {
                    da[j] = da[j] + gv;
                }
            }
            &Op::Sum { a } => {
                let n = self.val(a).numel();
                for d in slot(grads, a, n).iter_mut() {
                    *d = *d + g[0];
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let v = *self.val(*logits).shape().last().unwrap();
                let scale = g[0] / T::from_f64(*count as f64);
                let dl = slot(grads, *logits, probs.len());
                for (r, tgt) in targets.iter().enumerate() {
                    let Some(t) = tgt else { continue };
                    for j in 0..v {
                        let mut p = probs[r * v + j];
                        if j == *t {
                            p = p - T::one();
                        }
                        dl[r * v + j] = dl[r * v + j] + scale * p;
                    }
                }
            }
            Op::KlDiv { teacher, student, temperature, rows, lp_t, lp_s, row_kl, count } => {
                let v = *self.val(*student).shape().last().unwrap();
                let scale = g[0] / (T::from_f64(*count as f64) * *temperature);
                if self.wants(*student) {
                    let ds = slot(grads, *student, lp_s.len());
                    for (r, _) in rows.iter().enumerate().filter(|(_, &on)| on) {
                        for j in r * v..(r + 1) * v {
                            ds[j] = ds[j] + scale * (lp_s[j].exp() - lp_t[j].exp());
                        }
                    }
                }
                if self.wants(*teacher) {
                    let dt = slot(grads, *teacher, lp_t.len());
                    for (r, _) in rows.iter().enumerate().filter(|(_, &on)| on) {
                        for j in r * v..(r + 1) * v {
                            let pt = lp_t[j].exp();
                            dt[j] = dt[j] + scale * pt * ((lp_t[j] - lp_s[j]) - row_kl[r]);
                        }
                    }
                }
            }
        }
    }

    fn scan_backward(
        &self,
        [x, dt, a, b, c, d]: [Var; 6],
        dims: super::tape::ScanDims,
        states: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let super::tape::ScanDims { batch, len, heads, head_dim, groups, state } = dims;
        let (xd, dtd, ad, bd, cd, dd) = (
            self.val(x).data(),
            self.val(dt).data(),
            self.val(a).data(),
            self.val(b).data(),
            self.val(c).data(),
            self.val(d).data(),
        );
        let hpg = heads / groups;
        let hs = head_dim * state;
        let mut gx = vec![T::zero(); xd.len()];
        let mut gdt = vec![T::zero(); dtd.len()];
        let mut ga = vec![T::zero(); heads];
        let mut gb = vec![T::zero(); bd.len()];
        let mut gc = vec![T::zero(); cd.len()];
        let mut gd = vec![T::zero(); heads];
        let mut lam = vec![T::zero(); hs];
        for bi in 0..batch {
            for h in 0..heads {
                let grp = h / hpg;
                lam.iter_mut().for_each(|l| *l = T::zero());
                for t in (0..len).rev() {
                    let bl = bi * len + t;
                    let xo = (bl * heads + h) * head_dim;
                    let so = (bl * heads + h) * hs;
                    let go = (bl * groups + grp) * state;
                    let dtv = dtd[bl * heads + h];
                    let decay = (dtv * ad[h]).exp();
                    for p in 0..head_dim {
                        let gy = g[xo + p];
                        gd[h] = gd[h] + gy * xd[xo + p];
                        gx[xo + p] = gx[xo + p] + dd[h] * gy;
                        for n in 0..state {
                            lam[p * state + n] = lam[p * state + n] + cd[go + n] * gy;
                            gc[go + n] = gc[go + n] + gy * states[so + p * state + n];
                        }
                    }
                    let mut d_decay = T::zero();
                    if t > 0 {
                        let prev = &states[so - heads * hs..so - heads * hs + hs];
                        d_decay = dot(&lam, prev);
                    }
                    let mut d_dt = d_decay * decay * ad[h];
                    ga[h] = ga[h] + d_decay * decay * dtv;
                    for p in 0..head_dim {
                        let xv = xd[xo + p];
                        let lrow = &lam[p * state..(p + 1) * state];
                        let brow = &bd[go..go + state];
                        let lb = dot(lrow, brow);
                        d_dt = d_dt + lb * xv;
                        gx[xo + p] = gx[xo + p] + dtv * lb;
                        for n in 0..state {
                            gb[go + n] = gb[go + n] + dtv * lrow[n] * xv;
                        }
                    }
                    gdt[bl * heads + h] = gdt[bl * heads + h] + d_dt;
                    for l in lam.iter_mut() {
                        *l = *l * decay;
                    }
                }
            }
        }
        accumulate(grads, self, x, &gx);
        accumulate(grads, self, dt, &gdt);
        accumulate(grads, self, a, &ga);
        accumulate(grads, self, b, &gb);
        accumulate(grads, self, c, &gc);
        accumulate(grads, self, d, &gd);
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], tape: &Tape<T>, v: Var, delta: &[T]) {
    if !tape.requires_grad(v) {
        return;
    }
    let dst = slot(grads, v, delta.len());
    for (d, &x) in dst.iter_mut().zip(delta) {
        *d = *d + x;
    }
}
