use thiserror::Error;

use crate::geometry::{ModelKind, ParseError};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("profile not positive: value {value} at x = {x}")]
    NonPositiveProfile { x: f64, value: f64 },
    #[error("profile `{expr}` is not finite at x = {x}")]
    NonFiniteProfile { expr: String, x: f64 },
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid base circle: {0}")]
    InvalidBase(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("operation `{op}` is not supported for the {kind} model")]
    UnsupportedKind { op: &'static str, kind: ModelKind },
    #[error("fibre basis does not match the {0} model")]
    BasisMismatch(ModelKind),
    #[error("fibre basis needs at least 8 modes, got {0}")]
    TooFewModes(usize),
    #[error("the warped model only admits potentials that are constant along the fibre")]
    FibreDependentPotential,
    #[error("spectral gap {gap:.3e} at x = {x} is below the threshold")]
    GapFailure { x: f64, gap: f64 },
    #[error("ambiguous sign normalisation of band {band} at x = {x}")]
    DegenerateNormalization { band: usize, x: f64 },
    #[error("eigensolver did not converge: {0}")]
    NonConvergence(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("spectral separation violated: |P^2 - P| = {0:.3e} is not below 1/4")]
    SpectralSeparation(f64),
    #[error("projections too far apart for the Sz.-Nagy unitary: |P0 - P| = {0:.3e}")]
    ProjectionDistance(f64),
    #[error("no eigenvalue below the cutoff {0}")]
    EmptyTruncation(f64),
    #[error("no eigenvalue of H within {window:.3e} of {mu}")]
    NoMatch { mu: f64, window: f64 },
    #[error("near-degenerate match for {mu}: neighbour gap {gap:.3e} below {required:.3e}")]
    NearDegenerate { mu: f64, gap: f64, required: f64 },
    #[error("rate fit needs 3 usable points, got {usable}")]
    TooFewPoints { usable: usize },
    #[error("invalid config:\n{}", .0.join("\n"))]
    Config(Vec<String>),
    #[error("self-convergence guard violated: eigenvalues moved by {change:.3e} under doubling")]
    GuardViolation { change: f64 },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Parse(_)
            | Error::Config(_)
            | Error::InvalidEpsilon(_)
            | Error::InvalidBase(_)
            | Error::NonPositiveProfile { .. }
            | Error::NonFiniteProfile { .. }
            | Error::FibreDependentPotential
            | Error::TooFewModes(_)
            | Error::DimensionCap { .. }
            | Error::UnsupportedKind { .. }
            | Error::Io(_) => 1,
            _ => 2,
        }
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
