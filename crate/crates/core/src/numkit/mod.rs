//! Minimal dense numeric kernel: matrices, layers with explicit backward
//! passes, Adam, and a finite-difference gradient checker.

mod adam;
pub mod gradcheck;
pub mod layers;
mod matrix;

pub use adam::AdamState;
pub use gradcheck::{central_difference, grad_check, relative_error, GradCheckReport};
pub use layers::{
    relu_backward, relu_in_place, sigmoid, sigmoid_backward, softmax, softmax_backward, Linear, LinearGrads,
    TemporalConv, TemporalConvGrads,
};
pub use matrix::{dot, Matrix};
