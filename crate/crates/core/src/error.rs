use std::path::PathBuf;

pub type Result<T, E = MtdError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum MtdError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("target image is identically zero")]
    ZeroImage,

    #[error("could not place {wanted} separated occurrences after {attempts} attempts (placed {placed}); lower the density")]
    PlacementInfeasible {
        wanted: usize,
        placed: usize,
        attempts: usize,
    },

    #[error("estimate diverged at EM iteration {iteration}: {detail}; try a smaller learning rate")]
    Diverged { iteration: usize, detail: String },

    #[error("training loss became non-finite at step {step}")]
    TrainingDiverged { step: usize },

    #[error("time limit exceeded after {iterations} iterations")]
    TimeLimit { iterations: usize },

    #[error("missing metadata: {0}")]
    MissingMetadata(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl MtdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MtdError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            MtdError::NonFinite(_)
                | MtdError::Diverged { .. }
                | MtdError::TrainingDiverged { .. }
                | MtdError::PlacementInfeasible { .. }
                | MtdError::ZeroImage
                | MtdError::TimeLimit { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            MtdError::Io { .. }
                | MtdError::Format { .. }
                | MtdError::MissingMetadata(_)
                | MtdError::Json(_)
                | MtdError::Csv(_)
        )
    }
}
