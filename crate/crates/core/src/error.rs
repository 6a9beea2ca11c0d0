use alloc::string::String;

/// Errors raised by the estimators and generators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Arguments violate a documented precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// Spatial dimensions of two objects disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    /// Minus-sampling erosion leaves an empty window.
    #[error("erosion exceeds window: r = {r}, t = {t}")]
    ErosionExceedsWindow { r: f64, t: f64 },
    /// A pattern had no points where at least one is required.
    #[error("empty pattern")]
    EmptyPattern,
    /// Covariance matrix could not be factorized even with the largest jitter.
    #[error("covariance matrix is not positive semidefinite (largest jitter {jitter:e} failed)")]
    NotPositiveDefinite { jitter: f64 },
    /// A quadrature left at least one Voronoi cell without nodes.
    #[error("quadrature too coarse: {empty} generator cell(s) received no nodes")]
    QuadratureTooCoarse { empty: usize },
    /// An intensity exceeded its declared upper bound.
    #[error("intensity {value} exceeds declared bound {bound} at t = {t}")]
    IntensityBound { value: f64, bound: f64, t: f64 },
    /// Operation is not available for this configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A replicate in a Monte-Carlo loop failed.
    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
