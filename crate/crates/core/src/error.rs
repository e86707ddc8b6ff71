use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("need at least 2 keypoints, got {0}")]
    TooFewKeypoints(usize),
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    /// The weighted system does not pin down all three translation components.
    /// `unobservable` holds unit directions in translation space along which
    /// the solution is free.
    #[error("constraint system is rank deficient (rank {rank}); unobservable directions {unobservable:?}")]
    RankDeficient { rank: usize, unobservable: Vec<[f64; 3]> },
    #[error("all constraint weights are zero")]
    AllWeightsZero,
    #[error("normal matrix is singular")]
    SingularNormalMatrix,
    #[error("dimensions must be positive, got {0:?}")]
    NonPositiveDimension([f64; 3]),
    #[error("invalid orientation bin {0}")]
    InvalidBin(usize),
    #[error("ray through the object is degenerate (T_x = T_z = 0)")]
    DegenerateRay,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {len} vertices")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("mesh has no vertices or faces")]
    EmptyMesh,
    #[error("every vertex is at or behind the camera plane")]
    AllVerticesClipped,
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("need at least {needed} object points for a fit, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("loss became non-finite at step {0}")]
    DivergedLoss(usize),
    #[error("keypoint {0} projects behind the camera")]
    ProjectionFailure(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("file length {0} is not a multiple of 16 bytes")]
    TruncatedFile(usize),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn malformed(line: usize, reason: impl Into<String>) -> Self {
        Error::MalformedLine {
            line,
            reason: reason.into(),
        }
    }
}
