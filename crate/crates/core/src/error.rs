use thiserror::Error;

/// Every failure the library can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is at or below the normalization floor")]
    NearZeroNorm { norm: f64 },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss is not finite{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFiniteLoss { step: Option<usize> },
    #[error("gradient for parameter `{name}` is not finite")]
    NonFiniteGradient { name: String },
    #[error("temporal aggregation needs at least one frame")]
    EmptyFrameList,
    #[error("batch of {batch} vectors exceeds bank capacity {capacity}")]
    BatchLargerThanCapacity { batch: usize, capacity: usize },
    #[error("bank entry is not unit norm (norm {norm})")]
    NotUnitNorm { norm: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("positive frame set for pair {pair} is empty")]
    EmptyPositiveSet { pair: usize },
    #[error("salient frame set is empty")]
    EmptySalientSet,
    #[error("video has {frames} frames but {segments} segments were requested")]
    TooFewFrames { frames: usize, segments: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing checkpoint{}", path.as_ref().map(|p| format!(": {p}")).unwrap_or_default())]
    MissingCheckpoint { path: Option<String> },
    #[error("empty similarity matrix")]
    EmptyMatrix,
    #[error("gradient check failed: max relative error {max:.3e} is not below {tolerance:e}")]
    GradientCheckFailed { max: f64, tolerance: f64 },
    #[error("unsupported file version `{found}`, expected `{expected}`")]
    Version { found: String, expected: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch { op, detail: detail.into() }
}
