use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target class {target} out of range for {n_class} classes")]
    TargetOutOfRange { target: usize, n_class: usize },

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid tube chain: {0}")]
    Chain(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: malformed checkpoint at byte {offset}: {reason}")]
    Checkpoint { path: PathBuf, offset: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing features for snippet {0}")]
    MissingFeatures(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad input files or data, as opposed to
    /// programming or numerical failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::SchemaVersion { .. }
                | Error::Checkpoint { .. }
                | Error::Validation(_)
                | Error::Io { .. }
                | Error::Config(_)
                | Error::EmptyDataset
                | Error::MissingFeatures(_)
                | Error::UnknownParam(_)
        )
    }
}
