use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoraError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("row fully masked (row {row})")]
    FullyMaskedRow { row: usize },

    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },

    #[error("undefined cosine: zero-norm vector at row {row}")]
    ZeroNorm { row: usize },

    #[error("invalid sequence layout: {0}")]
    Layout(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no supervised positions")]
    EmptySupervision,

    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),

    #[error("missing gradient for trainable tensor {0}")]
    MissingGrad(String),

    #[error("unknown tensor {0}")]
    UnknownTensor(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric abort at step {step}: lm_loss={lm_loss}, distill_loss={distill_loss}")]
    NumericAbort {
        step: usize,
        lm_loss: f32,
        distill_loss: f32,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VoraError>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> VoraError {
    VoraError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
