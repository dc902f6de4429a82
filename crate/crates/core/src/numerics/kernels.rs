//! Dense loops shared by forward and backward passes.

use super::Scalar;

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}

/// Eight-lane dot product; the lane split lets the compiler vectorize the reduction.
#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail = tail + *a * *b;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

const MR: usize = 4;
const NR: usize = 16;

/// `c[m,n] += a[m,k] · b[k,n]`. Every output element accumulates over `k` in
/// index order, so a zero-padded `k` gives the same sums as a shortened one.
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut i0 = 0;
    while i0 < m {
        let mr = MR.min(m - i0);
        let mut j0 = 0;
        while j0 < n {
            let nr = NR.min(n - j0);
            if mr == MR && nr == NR {
                let mut acc = [[T::zero(); NR]; MR];
                for (r, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR]);
                }
                for p in 0..k {
                    let brow: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
                    for (r, row) in acc.iter_mut().enumerate() {
                        let av = a[(i0 + r) * k + p];
                        for l in 0..NR {
                            row[l] = row[l] + av * brow[l];
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(row);
                }
            } else {
                for i in i0..i0 + mr {
                    for p in 0..k {
                        let av = a[i * k + p];
                        let brow = &b[p * n + j0..p * n + j0 + nr];
                        axpy(av, brow, &mut c[i * n + j0..i * n + j0 + nr]);
                    }
                }
            }
            j0 += nr;
        }
        i0 += mr;
    }
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut bt = alloc::vec![T::zero(); k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, c, m, k, n);
}

/// `c[k,n] += a[m,k]ᵀ · b[m,n]`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let mut p0 = 0;
    while p0 < k {
        let pr = MR.min(k - p0);
        let mut j0 = 0;
        while j0 < n {
            let nr = NR.min(n - j0);
            if pr == MR && nr == NR {
                let mut acc = [[T::zero(); NR]; MR];
                for (r, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&c[(p0 + r) * n + j0..(p0 + r) * n + j0 + NR]);
                }
                for i in 0..m {
                    let brow: &[T; NR] = b[i * n + j0..i * n + j0 + NR].try_into().unwrap();
                    for (r, row) in acc.iter_mut().enumerate() {
                        let av = a[i * k + p0 + r];
                        for l in 0..NR {
                            row[l] = row[l] + av * brow[l];
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    c[(p0 + r) * n + j0..(p0 + r) * n + j0 + NR].copy_from_slice(row);
                }
            } else {
                for p in p0..p0 + pr {
                    for i in 0..m {
                        let av = a[i * k + p];
                        axpy(av, &b[i * n + j0..i * n + j0 + nr], &mut c[p * n + j0..p * n + j0 + nr]);
                    }
                }
            }
            j0 += nr;
        }
        p0 += pr;
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// In-place softmax over `row`, returning nothing; rows with a causal limit
/// only normalize over the first `limit` entries and zero the rest.
pub(crate) fn softmax_row<T: Scalar>(row: &mut [T], limit: usize) {
    let (live, dead) = row.split_at_mut(limit);
    let mx = live.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in live.iter_mut() {
        *v = (*v - mx).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in live.iter_mut() {
        *v = *v * inv;
    }
    for v in dead.iter_mut() {
        *v = T::zero();
    }
}

/// Log-softmax of `row` written into `out`.
pub(crate) fn log_softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for &v in row {
        sum = sum + (v - mx).exp();
    }
    let lse = mx + sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}
