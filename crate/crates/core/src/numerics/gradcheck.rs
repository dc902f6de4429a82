//! Central-difference oracle for every differentiable primitive.

use alloc::vec;
use alloc::vec::Vec;

use super::{Rng, Tape, Tensor, Var};
use crate::error::Result;

/// Differentiable primitives exposed by [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    BatchMatMul,
    BatchMatMulT,
    Add,
    Mul,
    Scale,
    Exp,
    Silu,
    Softplus,
    LeakyRelu,
    Abs,
    Softmax,
    CausalSoftmax,
    LayerNorm,
    MaskedLayerNorm,
    RmsNorm,
    MaskedRmsNorm,
    CausalConv1d,
    SelectiveScan,
    Transpose12,
    Gather,
    Embedding,
    Sum,
    CrossEntropy,
    KlDiv,
}

impl Primitive {
    pub const ALL: [Primitive; 25] = [
        Primitive::MatMul,
        Primitive::BatchMatMul,
        Primitive::BatchMatMulT,
        Primitive::Add,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::Exp,
        Primitive::Silu,
        Primitive::Softplus,
        Primitive::LeakyRelu,
        Primitive::Abs,
        Primitive::Softmax,
        Primitive::CausalSoftmax,
        Primitive::LayerNorm,
        Primitive::MaskedLayerNorm,
        Primitive::RmsNorm,
        Primitive::MaskedRmsNorm,
        Primitive::CausalConv1d,
        Primitive::SelectiveScan,
        Primitive::Transpose12,
        Primitive::Gather,
        Primitive::Embedding,
        Primitive::Sum,
        Primitive::CrossEntropy,
        Primitive::KlDiv,
    ];

    /// Random inputs of a valid signature for this primitive. Inputs of
    /// piecewise-linear primitives stay away from their kink at zero.
    pub fn random_inputs(self, rng: &mut Rng) -> Vec<Tensor<f64>> {
        let mut t = |shape: &[usize], lo: f64, hi: f64| {
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
        };
        use Primitive::*;
        match self {
            MatMul => vec![t(&[4, 4], -1.0, 1.0), t(&[4, 4], -1.0, 1.0)],
            BatchMatMul => vec![t(&[2, 3, 4], -1.0, 1.0), t(&[2, 4, 5], -1.0, 1.0)],
            BatchMatMulT => vec![t(&[2, 3, 4], -1.0, 1.0), t(&[2, 5, 4], -1.0, 1.0)],
            Add | Mul => vec![t(&[3, 4], -1.0, 1.0), t(&[4], -1.0, 1.0)],
            Scale | Exp | Silu | Softplus | Sum | Transpose12 => {
                let shape: &[usize] = if self == Transpose12 { &[2, 3, 2, 2] } else { &[3, 4] };
                vec![t(shape, -2.0, 2.0)]
            }
            LeakyRelu | Abs => {
                let mut x = t(&[3, 4], 0.1, 2.0);
                for (i, v) in x.data_mut().iter_mut().enumerate() {
                    if i % 2 == 0 {
                        *v = -*v;
                    }
                }
                vec![x]
            }
            Softmax => vec![t(&[8], -2.0, 2.0)],
            CausalSoftmax => vec![t(&[2, 4, 4], -2.0, 2.0)],
            LayerNorm => vec![t(&[3, 6], -2.0, 2.0), t(&[6], 0.5, 1.5), t(&[6], -0.5, 0.5)],
            MaskedLayerNorm => vec![t(&[3, 6], -2.0, 2.0), t(&[6], 0.5, 1.5), t(&[6], -0.5, 0.5), t(&[6], 0.2, 1.0)],
            RmsNorm => vec![t(&[3, 6], -2.0, 2.0), t(&[6], 0.5, 1.5)],
            MaskedRmsNorm => vec![t(&[3, 6], -2.0, 2.0), t(&[6], 0.5, 1.5), t(&[6], 0.2, 1.0)],
            CausalConv1d => vec![t(&[2, 5, 3], -1.0, 1.0), t(&[3, 4], -1.0, 1.0)],
            SelectiveScan => vec![
                t(&[1, 6, 4, 2], -1.0, 1.0),
                t(&[1, 6, 4], 0.1, 1.0),
                t(&[4], -1.0, -0.1),
                t(&[1, 6, 2, 3], -1.0, 1.0),
                t(&[1, 6, 2, 3], -1.0, 1.0),
                t(&[4], -1.0, 1.0),
            ],
            Gather => vec![t(&[6], -1.0, 1.0)],
            Embedding => vec![t(&[5, 3], -1.0, 1.0)],
            CrossEntropy => vec![t(&[4, 6], -2.0, 2.0)],
            KlDiv => vec![t(&[4, 6], -2.0, 2.0), t(&[4, 6], -2.0, 2.0)],
        }
    }

    pub(crate) fn apply(self, tape: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
        use Primitive::*;
        Ok(match self {
            MatMul => tape.matmul(v[0], v[1])?,
            BatchMatMul => tape.bmm(v[0], v[1], false)?,
            BatchMatMulT => tape.bmm(v[0], v[1], true)?,
            Add => tape.add(v[0], v[1])?,
            Mul => tape.mul(v[0], v[1])?,
            Scale => tape.scale(v[0], -1.7),
            Exp => tape.exp(v[0]),
            Silu => tape.silu(v[0]),
            Softplus => tape.softplus(v[0]),
            LeakyRelu => tape.leaky_relu(v[0], 0.01),
            Abs => tape.abs(v[0]),
            Softmax => tape.softmax(v[0], false)?,
            CausalSoftmax => tape.softmax(v[0], true)?,
            LayerNorm => tape.layer_norm(v[0], None, v[1], v[2], 1e-5)?,
            MaskedLayerNorm => tape.layer_norm(v[0], Some(v[3]), v[1], v[2], 1e-5)?,
            RmsNorm => tape.rms_norm(v[0], None, v[1], 1e-5)?,
            MaskedRmsNorm => tape.rms_norm(v[0], Some(v[2]), v[1], 1e-5)?,
            CausalConv1d => tape.causal_conv1d(v[0], v[1])?,
            SelectiveScan => tape.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5])?,
            Transpose12 => tape.transpose12(v[0])?,
            Gather => tape.gather(v[0], &[4, 0, 4, 2, 5], &[5])?,
            Embedding => tape.embedding(v[0], &[1, 4, 1, 0], &[2, 2])?,
            Sum => tape.sum(v[0]),
            CrossEntropy => tape.cross_entropy(v[0], &[Some(1), None, Some(5), Some(0)])?,
            KlDiv => tape.kl_div(v[0], v[1], 1.3, Some(&[true, true, false, true]))?,
        })
    }
}

/// Scalar probe `Σ out ⊙ w` with fixed pseudo-random weights `w`.
fn probe(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = Rng::seed(0x9e37_79b9);
    let w = Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn evaluate(prim: Primitive, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = prim.apply(&mut tape, &vars)?;
    let loss = probe(&mut tape, out)?;
    Ok(tape.value(loss).data()[0])
}

/// Maximum over every input element of `|analytic − numeric| / (|numeric| + 1e-8)`,
/// with central differences of width `step`.
pub fn grad_check(prim: Primitive, inputs: &[Tensor<f64>], step: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = prim.apply(&mut tape, &vars)?;
    let loss = probe(&mut tape, out)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").to_vec();
        for e in 0..inputs[k].numel() {
            let orig = inputs[k].data()[e];
            work[k].data_mut()[e] = orig + step;
            let up = evaluate(prim, &work)?;
            work[k].data_mut()[e] = orig - step;
            let down = evaluate(prim, &work)?;
            work[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[e], numeric));
        }
    }
    Ok(worst)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Central-difference gradient of an arbitrary scalar function at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + step;
            let up = f(&work);
            work[i] = orig - step;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}
