//! Dense `f64` tensors, a recorded autodiff tape, and Adam.

mod adam;
mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use adam::{AdamState, ParamSet};
pub use gradcheck::{finite_diff_check, DEFAULT_STEP};
pub use graph::{Graph, Var};
pub use ops::{cross_entropy, log_softmax, log_sum_exp, softmax, softmax_masked, Mask, Targets};
pub use tensor::Tensor;
