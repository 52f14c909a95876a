use crate::ClassId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,
    #[error("non-finite score")]
    NonFinite,
    #[error("negative constraint")]
    NegativeConstraint,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("infeasible size constraint: class {class} requires {size} pixels but the map has {capacity}")]
    InfeasibleConstraint { class: ClassId, size: f64, capacity: usize },
    #[error("class {0} missing from stack")]
    MissingClass(ClassId),
    #[error("invalid label {0}")]
    InvalidLabel(ClassId),
    #[error("threshold must be positive")]
    NonPositiveThreshold,
    #[error("empty scene list")]
    EmptyScenes,
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("scene generation failed: {0}")]
    SceneGeneration(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
