//! Dense tensors, reverse-mode gradients and finite-difference checking.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_report, grad_check_stencil, GradCheckReport, Stencil, TracedFn,
};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::{
    add_row_bias, concat_cols, gather_cols, matmul, row_sums, sigmoid, softplus, softplus_scalar,
    Tensor,
};
