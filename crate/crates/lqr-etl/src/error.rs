//! Crate-wide error type.

use std::fmt;

/// Errors produced by solvers, system constructors, statistics and the
/// scenario harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Spectral radius of the system matrix is not strictly below one.
    NotSchurStable { spectral_radius: f64 },
    /// The vectorized linear system of a Lyapunov equation is numerically singular.
    SingularSystem,
    /// The pair (A, B) is not stabilizable (or a Riccati iteration failed to converge).
    NotStabilizable,
    /// An iterative eigenvalue or fixed-point computation did not converge.
    NonConvergence { what: &'static str },
    /// Matrix expected to be positive semidefinite has a too-negative eigenvalue.
    NotPsd { min_eigenvalue: f64 },
    /// Matrix expected to be positive definite is singular or indefinite.
    NotPositiveDefinite { min_eigenvalue: f64 },
    /// Matrix expected to be symmetric deviates beyond tolerance.
    NotSymmetric { asymmetry: f64 },
    /// Incompatible matrix or vector dimensions.
    ShapeMismatch { context: &'static str },
    /// Joint covariance dimension N*n exceeds the configured cap.
    DimensionCap { dim: usize, cap: usize },
    /// MGF argument outside the domain of definition.
    OutOfDomain { xi: f64, sup: f64 },
    /// Joint covariance is singular where an inverse is required.
    SingularSigma,
    /// State-bound shaping matrix W is singular.
    SingularW,
    /// Requested cost window reaches before the start of the trajectory.
    WindowOutOfRange { start_needed: i64, start_have: i64 },
    /// Sample slice length does not match the configured sample count.
    LengthMismatch { expected: usize, got: usize },
    /// Trigger history does not yet span the required number of states.
    InsufficientHistory { have: usize, need: usize },
    /// Relative trigger is undefined for a zero expected cost.
    ZeroExpectedCost,
    /// The MGF spectrum has no positive eigenvalue.
    DegenerateSpectrum,
    /// Random system generation exhausted its resampling budget.
    GenerationFailed { attempts: usize },
    /// A simulated state left the finite range (divergence).
    NonFiniteState { step: usize },
    /// Index beyond the defined range of a signal.
    OutOfRange { index: usize, limit: usize },
    /// Regressor matrix is rank deficient (insufficient excitation).
    RankDeficient { rank: usize, needed: usize },
    /// Not enough samples for the requested estimate.
    TooFewSamples { have: usize, need: usize },
    /// Detection reported before the change it is attributed to.
    NegativeDelay,
    /// Marginal density vanishes where a conditional is requested.
    ZeroMarginal,
    /// Scenario configuration is invalid.
    Config(String),
    /// File I/O failure (path and OS message).
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotSchurStable { spectral_radius } => {
                write!(f, "matrix is not Schur stable (spectral radius {spectral_radius})")
            }
            Error::SingularSystem => write!(f, "vectorized Lyapunov system is singular"),
            Error::NotStabilizable => write!(f, "system pair (A, B) is not stabilizable"),
            Error::NonConvergence { what } => write!(f, "{what} did not converge"),
            Error::NotPsd { min_eigenvalue } => {
                write!(f, "matrix is not positive semidefinite (min eigenvalue {min_eigenvalue})")
            }
            Error::NotPositiveDefinite { min_eigenvalue } => {
                write!(f, "matrix is not positive definite (min eigenvalue {min_eigenvalue})")
            }
            Error::NotSymmetric { asymmetry } => {
                write!(f, "matrix is not symmetric (relative asymmetry {asymmetry})")
            }
            Error::ShapeMismatch { context } => write!(f, "dimension mismatch: {context}"),
            Error::DimensionCap { dim, cap } => {
                write!(f, "joint dimension {dim} exceeds cap {cap}")
            }
            Error::OutOfDomain { xi, sup } => {
                write!(f, "MGF argument {xi} outside domain (must be < {sup})")
            }
            Error::SingularSigma => write!(f, "joint covariance is singular"),
            Error::SingularW => write!(f, "state-bound matrix W is singular"),
            Error::WindowOutOfRange { start_needed, start_have } => write!(
                f,
                "cost window starts at {start_needed} before trajectory start {start_have}"
            ),
            Error::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} samples, got {got}")
            }
            Error::InsufficientHistory { have, need } => {
                write!(f, "trigger history has {have} states, needs {need}")
            }
            Error::ZeroExpectedCost => write!(f, "expected cost is zero"),
            Error::DegenerateSpectrum => write!(f, "spectrum has no positive eigenvalue"),
            Error::GenerationFailed { attempts } => {
                write!(f, "system generation failed after {attempts} attempts")
            }
            Error::NonFiniteState { step } => {
                write!(f, "state diverged beyond the finite range at step {step}")
            }
            Error::OutOfRange { index, limit } => {
                write!(f, "index {index} beyond signal length {limit}")
            }
            Error::RankDeficient { rank, needed } => {
                write!(f, "regressor rank {rank} below required {needed}")
            }
            Error::TooFewSamples { have, need } => {
                write!(f, "have {have} samples, need at least {need}")
            }
            Error::NegativeDelay => write!(f, "detection step precedes change step"),
            Error::ZeroMarginal => write!(f, "marginal density is zero on requested support"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Io(msg) => write!(f, "I/O error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
