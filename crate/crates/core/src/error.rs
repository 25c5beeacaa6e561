use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the pipeline.
///
/// Variants are split into validation failures (bad input, violated
/// invariants) and computation failures; see [`Error::is_validation`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("malformed document {path}: {message}")]
    Document { path: PathBuf, message: String },
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("observation '{id}': {reason}")]
    Observation { id: String, reason: String },
    #[error("empty aperture set: the grid holds only the center view")]
    EmptyApertureSet,
    #[error("workspace outside visual hull: {0}")]
    OutsideVisualHull(String),
    #[error("grasp outside workspace")]
    GraspOutsideWorkspace,
    #[error("corrupt volume: {0}")]
    CorruptVolume(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("unsupported version {found} (reader supports {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("no valid grasp candidates: {0}")]
    NoValidCandidates(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad inputs rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Image { .. }
                | Error::Document { .. }
                | Error::Invalid { .. }
                | Error::Observation { .. }
                | Error::EmptyApertureSet
                | Error::CorruptVolume(_)
                | Error::CorruptModel(_)
                | Error::UnsupportedVersion { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}
