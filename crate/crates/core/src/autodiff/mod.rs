//! Deterministic reverse-mode differentiation over dense row-major tensors.

mod element;
mod gradcheck;
mod graph;
pub mod ops;
mod param;
mod tensor;

pub use element::{DType, Element};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{BackwardOp, Graph, Mode, Var};
pub use ops::conv::{conv1d_forward, conv_out_len, ConvGeometry};
pub use ops::loss::{bce_with_logits, sigmoid, softmax_rows};
pub use ops::norm::{BatchNormState, BN_EPS, BN_MOMENTUM};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
