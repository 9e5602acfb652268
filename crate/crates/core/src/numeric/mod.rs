//! Dense linear algebra, seeded randomness, the softmax cross-entropy kernel
//! and the two optimizers every model in the crate is trained with.

mod checksum;
mod gradcheck;
mod linear;
mod loss;
mod matrix;
mod optim;
mod rng;
mod sampling;

pub use checksum::checksum;
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use linear::{Linear, LinearGrads};
pub use loss::{argmax, softmax_cross_entropy, softmax_rows};
pub use matrix::DenseMatrix;
pub use optim::{OptimState, OptimizerKind};
pub use rng::RngStream;
pub use sampling::sample_diag_gaussian;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
}
