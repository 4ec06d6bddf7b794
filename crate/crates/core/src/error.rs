use std::path::PathBuf;

use crate::data::SliceId;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data violates a documented invariant (labels out of range,
    /// shape mismatch, negative probabilities, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller-supplied argument is outside its allowed domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("no slices found in {}", .0.display())]
    NoSlices(PathBuf),

    #[error("missing file for slice {id}: {}", path.display())]
    MissingSlice { id: SliceId, path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a runtime failure.
    /// The CLI maps these to exit status 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Argument(_)
                | Error::Config(_)
                | Error::NoSlices(_)
                | Error::MissingSlice { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
