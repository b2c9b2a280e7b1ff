//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors produced by construction, compression and factorization routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A point cloud with zero points was supplied.
    EmptyCloud,
    /// Invalid geometry parameter (radius, count, ...).
    InvalidGeometry(String),
    /// Malformed coordinate line in a geometry listing.
    Parse { line: usize, message: String },
    /// Kernel evaluated on the diagonal without a self-interaction rule.
    SingularEntry { index: usize },
    /// Index outside the bound geometry.
    IndexOutOfRange { index: usize, len: usize },
    /// Matrix shape mismatch in an operator or solver.
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    /// Rank-revealing QR hit the rank cap before reaching the tolerance.
    RankOverflow { cap: usize },
    /// A dense diagonal block was numerically singular.
    SingularBlock { description: String },
    /// Too many probe vectors requested for the operator dimensions.
    SketchTooWide { requested: usize, limit: usize },
    /// The iterative randomized scheme did not reach the residual target.
    NonConvergence { iterations: usize, residual: f64 },
    /// A randomized reconstruction failed its residual check after retries.
    ReconstructionFailed { residual: f64, tolerance: f64 },
    /// The peeling scheme saw an ill-conditioned block (rank too small).
    IllConditionedPeel { level: usize },
    /// Analytic series did not converge at the requested truncation.
    SeriesNotConverged { truncation: usize },
    /// Dense expansion request above the configured entry cap.
    DenseCapExceeded { entries: usize, cap: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyCloud => write!(f, "point cloud is empty"),
            Error::InvalidGeometry(m) => write!(f, "invalid geometry: {m}"),
            Error::Parse { line, message } => write!(f, "parse error on line {line}: {message}"),
            Error::SingularEntry { index } => {
                write!(f, "singular kernel entry at index {index} (no diagonal rule)")
            }
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for {len} unknowns")
            }
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected:?}, got {got:?}")
            }
            Error::RankOverflow { cap } => write!(f, "rank exceeded cap {cap} before tolerance"),
            Error::SingularBlock { description } => write!(f, "singular block: {description}"),
            Error::SketchTooWide { requested, limit } => {
                write!(f, "requested {requested} probes, operator supports at most {limit}")
            }
            Error::NonConvergence { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:.3e})")
            }
            Error::ReconstructionFailed { residual, tolerance } => {
                write!(f, "reconstruction residual {residual:.3e} above tolerance {tolerance:.3e}")
            }
            Error::IllConditionedPeel { level } => {
                write!(f, "ill-conditioned peel at level {level}; rank too small")
            }
            Error::SeriesNotConverged { truncation } => {
                write!(f, "series not converged with {truncation} terms")
            }
            Error::DenseCapExceeded { entries, cap } => {
                write!(f, "dense expansion of {entries} entries exceeds cap {cap}")
            }
        }
    }
}

#[cfg(test)]
impl std::error::Error for Error {}
