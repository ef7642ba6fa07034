//! Tensor arithmetic, reverse-mode differentiation and the symmetric
//! eigensolver that the model is built on.

pub mod autodiff;
pub mod eigen;
pub mod gradcheck;
pub mod linalg;
pub mod ops;
pub mod param;
pub mod tensor;

pub use autodiff::{backward, grad_enabled, no_grad, Gradients, Var};
pub use eigen::{symmetric_eigen_lowest, EigenBasis};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::Mask;
pub use param::{Binding, Param, ParamId, ParamStore};
pub use tensor::Tensor;

/// Softmax over the last axis of a plain tensor.
pub fn softmax_lastdim(x: &Tensor, mask: Option<&Mask>) -> crate::Result<Tensor> {
    ops::softmax_forward(x, mask)
}
