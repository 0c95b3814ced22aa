//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Forward ops are methods on [`Tape`]; each returns a [`Var`] handle and
//! records what backward needs. [`Tape::backward`] sweeps the tape once in
//! reverse and returns [`Gradients`] for every tracked leaf.

mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
mod ops;
mod params;
pub mod relpos;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use params::{ParamId, ParamStore, Session};
pub use relpos::RelPosBias;
pub use scalar::{cst, DType, Scalar};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
