use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: log of nonpositive value {value}")]
    NonPositiveLog { op: &'static str, value: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("line {line}: {path}: {msg}")]
    Parse {
        line: usize,
        path: String,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("unusable scene: {0}")]
    UnusableScene(String),

    #[error("graph has no intersection nodes")]
    NoIntersection,

    #[error("infeasible cluster constraints: n={n}, k={k}, min_size={min_size}, max_size={max_size}")]
    InfeasibleClusters {
        n: usize,
        k: usize,
        min_size: usize,
        max_size: usize,
    },

    #[error("zero-variance feature matrix")]
    ZeroVariance,

    #[error("head `{head}` requires pretext {expected}, model is configured for {actual}")]
    PretextMismatch {
        head: &'static str,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("non-finite loss at step {step}: {breakdown}")]
    NonFiniteLoss { step: usize, breakdown: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing scene tags: {}", .0.join(", "))]
    MissingTags(Vec<String>),

    #[error("ground truth future is absent")]
    MissingFuture,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}
