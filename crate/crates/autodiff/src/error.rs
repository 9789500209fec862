use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AutodiffError {
    pub(crate) fn shapes(op: &'static str, shapes: &[&[usize]]) -> Self {
        let shapes = shapes.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(" vs ");
        AutodiffError::ShapeMismatch { op, shapes }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        AutodiffError::InvalidArgument { op, msg: msg.into() }
    }
}
