//! Minimal dense numerical core: matrices, linear layers, activations,
//! cross-entropy, inverted dropout, Adam with coupled L2, and a
//! finite-difference gradient checker.
//!
//! Everything is `f64` and hand-differentiated; there is no autodiff graph.

mod activation;
mod adam;
mod dropout;
mod gradcheck;
mod layers;
mod loss;
mod matrix;

pub use activation::{
    log_sum_exp, sigmoid, sigmoid_backward, sigmoid_scalar, softmax, softmax_backward,
    softmax_rows, tanh, tanh_backward,
};
pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use dropout::{DropoutMode, DropoutSpec};
pub use gradcheck::{gradient_check, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use layers::{backward_linear, forward_linear, Linear, LinearGrads};
pub use loss::{cross_entropy, LossGrad};
pub use matrix::{dot, matmul, Matrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("invalid {name}: {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
}
