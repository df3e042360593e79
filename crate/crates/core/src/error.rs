use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point at distance {distance:.3e} from the target lies outside the tube of radius {tube:.3e}")]
    OutsideTube { distance: f64, tube: f64 },
    #[error("geodesic distance {distance:.6} reaches the injectivity radius {injectivity:.6}")]
    CutLocus { distance: f64, injectivity: f64 },
    #[error("maps are {distance:.4e} apart, beyond the transport radius {epsilon:.4e}")]
    TransportRadius { distance: f64, epsilon: f64 },
    #[error("target does not carry a {0}")]
    StructureUnavailable(&'static str),
    #[error("tangency residual {residual:.3e} exceeds {limit:.1e}")]
    TangencyViolation { residual: f64, limit: f64 },
    #[error("tangent frame is singular at this point (too close to the frame axis)")]
    FrameSingular,
    #[error("eigensolver residual {residual:.3e} misses target {target:.1e}")]
    EigenFailure { residual: f64, target: f64 },
    #[error("ambiguous eigenvalue cluster: {0}")]
    AmbiguousCluster(String),
    #[error("contour passes within {distance:.3e} of an eigenvalue")]
    ContourHitsSpectrum { distance: f64 },
    #[error("linear solve failed: {0}")]
    SolverFailure(String),
    #[error("projected spinor has norm {norm:.3e}; projection collapsed")]
    DegenerateProjection { norm: f64 },
    #[error("degree integral is {value:.4}, too far from an integer")]
    DegenerateDegree { value: f64 },
    #[error("kernel dimension {0} is odd")]
    OddKernelDimension(i64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("at flow step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },
}

impl Error {
    /// Process exit status for this error: 2 for configuration problems,
    /// 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::AtStep { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
