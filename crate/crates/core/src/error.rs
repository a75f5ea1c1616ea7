use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image too small: {height}x{width} (minimum {min}x{min})")]
    ImageTooSmall { height: usize, width: usize, min: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing annotation for `{stem}`: {path}")]
    MissingAnnotation { stem: String, path: PathBuf },

    #[error("segmentation backend `{backend}` failed: {reason}")]
    Backend { backend: String, reason: String },

    #[error("no segments produced for `{0}`")]
    NoSegments(String),

    #[error("empty selection: at least one valid segment must be selected")]
    EmptySelection,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("power normalization undefined: channel encoder output is all zeros")]
    DegenerateSymbols,

    #[error("non-positive signal power {0}")]
    NonPositivePower(f64),

    #[error("unknown channel kind `{0}`")]
    UnknownChannel(String),

    #[error("mutual-information bound is not finite at step {step}; reduce the estimator learning rate")]
    NonFiniteBound { step: usize },

    #[error("non-finite loss in {phase} at step {step}")]
    NonFiniteLoss { phase: String, step: usize },

    #[error("{phase} diverged at epoch {epoch}: loss {loss:.6} exceeds 10x initial {initial:.6}")]
    Diverged { phase: String, epoch: usize, loss: f64, initial: f64 },

    #[error("mask network collapsed to all-zero masks over epoch {epoch}; lower the sparsity weight mu")]
    MaskCollapse { epoch: usize },

    #[error("frozen module `{module}` changed during {phase}")]
    FreezeViolation { module: String, phase: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing prerequisite artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("invalid format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
