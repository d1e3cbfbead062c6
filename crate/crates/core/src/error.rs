use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// [`Error::category`] yields a short token that stays stable across
/// releases; the CLI prints it so scripts can match on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate mapping: projective denominator {0:e} too close to zero")]
    DegenerateMapping(f64),
    #[error("singular homography (determinant {0:e})")]
    SingularHomography(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("too few features: found {found}, need at least {needed}")]
    TooFewFeatures { found: usize, needed: usize },
    #[error("global motion estimation failed: best consensus {inliers} < {required}")]
    EstimationFailed { inliers: usize, required: usize },
    #[error("ROI grid mismatch: {0}")]
    GridMismatch(String),
    #[error("missing reference frame for inter-coded frame {0}")]
    MissingReference(u32),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated frame {0}")]
    TruncatedFrame(usize),
    #[error("empty ROI: mask has no ROI cell")]
    EmptyRoi,
    #[error("empty frame: no coded bits")]
    EmptyFrame,
    #[error("zero ROI area")]
    ZeroArea,
    #[error("zero reference rate")]
    ZeroReference,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateMapping(_) => "degenerate-mapping",
            Error::SingularHomography(_) => "singular-homography",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::TooFewFeatures { .. } => "too-few-features",
            Error::EstimationFailed { .. } => "estimation-failed",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::MissingReference(_) => "missing-reference",
            Error::CorruptStream(_) => "corrupt-stream",
            Error::MalformedHeader(_) => "malformed-header",
            Error::TruncatedFrame(_) => "truncated-frame",
            Error::EmptyRoi => "empty-roi",
            Error::EmptyFrame => "empty-frame",
            Error::ZeroArea => "zero-area",
            Error::ZeroReference => "zero-reference",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Io(_) => "io",
        }
    }
}
