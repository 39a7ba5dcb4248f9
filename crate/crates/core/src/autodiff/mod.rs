//! Reverse-mode automatic differentiation over a closed operation set.
//!
//! The engine is a define-by-run tape: a [`Graph`] owns every tensor produced
//! during one forward pass, operations append nodes as they execute, and
//! [`Graph::backward`] walks the node list in exact reverse insertion order,
//! accumulating gradients by addition. Handles ([`Var`]) are plain indices
//! into the graph's value arena, so they are `Copy` and cheap to pass around.
//!
//! The operation set is exactly what the classifier needs: fully-connected
//! layers, batch normalization (training and frozen-statistics modes), ReLU,
//! max-pooling over the neighbor axis, row gathering, elementwise addition,
//! reshape, inverted dropout, fused softmax + cross-entropy, and the fused
//! geometric affine normalization of grouped point features. Keeping the set
//! closed lets every backward rule be hand-derived and unit-tested against
//! finite differences.
//!
//! Gradients are recorded only for nodes with at least one tracked input, so
//! a forward pass over untracked leaves (inference) stores values but builds
//! no backward program.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use gradcheck::{check_gradient, GradCheckReport, DEFAULT_STEP};
pub use graph::{BnTrainOut, Graph, Var};

use alloc::vec::Vec;
use core::fmt;

/// Errors raised by graph operations and backward passes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpError {
    /// Two shapes that must agree (elementwise operands, matrix inner
    /// dimensions, channel vectors) did not.
    ShapeMismatch {
        /// Operation that rejected the shapes.
        op: &'static str,
        /// Shape of the first operand involved in the conflict.
        left: Vec<usize>,
        /// Shape of the second operand involved in the conflict.
        right: Vec<usize>,
    },
    /// An input tensor's rank is below what the operation requires.
    RankTooLow {
        /// Operation that rejected the input.
        op: &'static str,
        /// Minimum rank required.
        min_rank: usize,
        /// Shape actually supplied.
        got: Vec<usize>,
    },
    /// A gather index referred past the end of the source tensor.
    IndexOutOfRange {
        /// Offending row index.
        index: u32,
        /// Number of rows in the source.
        rows: usize,
    },
    /// A class label was outside the logit width.
    LabelOutOfRange {
        /// Offending label.
        label: u32,
        /// Number of classes (logit columns).
        classes: usize,
    },
    /// A reduction was requested over an empty axis or batch.
    EmptyReduction {
        /// Operation that required a non-empty axis.
        op: &'static str,
    },
    /// `backward` was called on a non-scalar value.
    NonScalarLoss {
        /// Element count of the would-be loss.
        numel: usize,
    },
    /// `backward` was called on a value with no tracked ancestors.
    UntrackedLoss,
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            OpError::RankTooLow { op, min_rank, got } => {
                write!(f, "{op}: needs rank >= {min_rank}, got shape {got:?}")
            }
            OpError::IndexOutOfRange { index, rows } => {
                write!(f, "gather index {index} out of range for {rows} rows")
            }
            OpError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            OpError::EmptyReduction { op } => {
                write!(f, "{op}: reduction over an empty axis")
            }
            OpError::NonScalarLoss { numel } => {
                write!(f, "backward target must be a scalar, got {numel} elements")
            }
            OpError::UntrackedLoss => {
                write!(f, "backward target has no tracked ancestors")
            }
        }
    }
}

impl core::error::Error for OpError {}
