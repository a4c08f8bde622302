use std::path::PathBuf;

use rsd_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("adapt student first: teacher embedding dim {teacher} differs from student dim {student}")]
    AdaptStudentFirst { teacher: usize, student: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch plan: {0}")]
    Plan(String),

    #[error("{path}: format error at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 configuration, 3 numerical, 4 I/O and data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Spec(_)
            | Error::Config(_)
            | Error::Plan(_)
            | Error::AdaptStudentFirst { .. }
            | Error::LabelOutOfRange { .. }
            | Error::Tensor(TensorError::Shape { .. }) => 2,
            Error::Numerical(_) | Error::Tensor(_) => 3,
            Error::Format { .. } | Error::Consistency(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
