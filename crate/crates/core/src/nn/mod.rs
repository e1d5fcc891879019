//! Dense-network math for the probing heads: forward primitives, softmax
//! cross-entropy, hand-written gradients, Adam, and a finite-difference
//! gradient check.

mod adam;
mod grad;
mod matrix;
mod ops;

pub use adam::{optimizer_step, AdamConfig, OptimizerState};
pub use grad::{
    backward, batch_loss, finite_difference_check, finite_difference_check_with, AffineClassifier,
    Differentiable, GradCheckOptions, GradCheckReport, Gradients, PlantedBug,
};
pub use matrix::{Affine, Matrix};
pub use ops::{
    affine_forward, argmax, cross_entropy_loss, cross_entropy_with_grad, relu, softmax,
    time_average,
};

pub(crate) use ops::{affine_into, mean_rows, relu_in_place};
