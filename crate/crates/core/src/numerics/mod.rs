//! Dense tensors and a tape-based reverse-mode autodiff engine with exactly
//! the primitives the elastic model needs.

mod backward;
mod gradcheck;
pub(crate) mod kernels;
mod random;
mod tape;
mod tensor;

pub use backward::Gradients;
pub use gradcheck::{grad_check, numeric_gradient, relative_error, Primitive};
pub use random::{gumbel_from_uniform, gumbel_sample, Rng};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
