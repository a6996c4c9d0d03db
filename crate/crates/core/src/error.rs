use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: width and height must be positive (got w={w}, h={h})")]
    InvalidBox { w: f64, h: f64 },
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("affine transform is not invertible (|det| = {det:e})")]
    DegenerateTransform { det: f64 },

    #[error("pnm: {0}")]
    PnmFormat(String),
    #[error("expected a single-channel image, got {channels} channels")]
    NotGrayscale { channels: usize },
    #[error("image {width}x{height} too small, need at least {min} on each side")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("morphology kernel dimensions must be odd and positive, got {w}x{h}")]
    BadKernel { w: usize, h: usize },

    #[error("perturbation {name}={value} outside envelope [{min}, {max}]")]
    OutsideEnvelope {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("template {model_id}: {message}")]
    BadTemplate { model_id: String, message: String },

    #[error("found {found} keypoints in {side} image, need at least {need}")]
    InsufficientKeypoints {
        side: &'static str,
        found: usize,
        need: usize,
    },
    #[error("found {found} descriptor matches, need at least {need}")]
    InsufficientMatches { found: usize, need: usize },
    #[error("need at least {need} point pairs, got {got}")]
    InsufficientPairs { got: usize, need: usize },
    #[error("source points are collinear or otherwise degenerate")]
    DegenerateGeometry,
    #[error("ransac found no model with at least {need} inliers")]
    NoConsensus { need: usize },

    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("vector length {got} does not match dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding store is empty")]
    EmptyStore,
    #[error("duplicate doc_id {0:?} in embedding store")]
    DuplicateDocId(String),
    #[error("constant image has no embeddable content")]
    ConstantImage,

    #[error("expected boxes of class {expected}, found {found}")]
    ClassMismatch { expected: String, found: String },

    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported schema_version {0}")]
    UnsupportedVersion(u64),
    #[error("config {path}: {message}")]
    ConfigRange { path: String, message: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors raised by the alignment/model-fitting stages (as
    /// opposed to bad input data), so callers can decide to fall back.
    pub fn is_pipeline_failure(&self) -> bool {
        matches!(
            self,
            Error::DegenerateTransform { .. }
                | Error::InsufficientKeypoints { .. }
                | Error::InsufficientMatches { .. }
                | Error::InsufficientPairs { .. }
                | Error::DegenerateGeometry
                | Error::NoConsensus { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
