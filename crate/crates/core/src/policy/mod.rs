//! Teacher, student and prior policies and every policy-side loss.

mod losses;
mod net;
mod prior;

pub use losses::{
    kl_graph, kl_loss, student_loss, student_loss_graph, teacher_loss_graph, train_student_step,
    train_teacher_step, StudentBatch, StudentLossParts, TeacherBatch, TeacherLossOut,
    TeacherLossParts, TeacherWeights,
};
pub use net::{
    ActMode, ActOut, BoundPolicy, Noise, PolicyDims, PolicyMode, PolicyNet, StepNodes,
    LOG_STD_MAX, LOG_STD_MIN,
};
pub use prior::{prior_loss, sample_index, PriorEncoder};

use crate::codebook::CodebookError;
use crate::diffcore::{GraphError, OptimError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("{what}: expected width {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("vq policy needs a codebook")]
    MissingCodebook,
    #[error("codebook is frozen")]
    FrozenCodebook,
    #[error("policy is frozen")]
    Frozen,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite log-std")]
    NonFiniteLogStd,
    #[error("target index {index} out of range for {k} classes")]
    IndexOutOfRange { index: usize, k: usize },
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}
