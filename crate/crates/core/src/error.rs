use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training state error: {0}")]
    TrainingState(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite loss in stage {stage} on sample {sample_id}: {detail}")]
    Divergence {
        stage: u8,
        sample_id: String,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
