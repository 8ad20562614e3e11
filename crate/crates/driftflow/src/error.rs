use thiserror::Error;

/// Errors shared across the crate.
///
/// Numerical routines return `Err` rather than NaN so callers can distinguish
/// "the quantity is undefined here" from "the computation lost precision".
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A matrix handed to a symmetric-only routine was not symmetric.
    #[error("matrix is not symmetric (max |A - A^T| entry = {max_asymmetry:.3e})")]
    NonSymmetric { max_asymmetry: f64 },

    /// An iterative eigensolver or root-finder failed to converge.
    #[error("eigendecomposition did not converge")]
    NoConvergence,

    /// The matrix has a repeated eigenvalue without a full eigenvector basis.
    #[error("matrix is defective: eigenvalue {eigenvalue} has geometric multiplicity below its algebraic multiplicity")]
    Defective { eigenvalue: String },

    /// A square matrix was required.
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    /// Two operands disagree on dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A structured input (network spec, batch list, split) is malformed.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The principal-flow coefficient was requested at its branch-point
    /// singularity (step size times eigenvalue equal to one).
    #[error("flow coefficient is singular at this argument")]
    SingularArgument,

    /// A trajectory left the representable range.
    #[error("state became non-finite at time {time}")]
    Nonfinite { time: f64 },

    /// The problem does not implement complex-point evaluation.
    #[error("this problem only supports real parameter vectors")]
    ComplexUnsupported,

    /// A direction-dependent quantity was requested where no direction exists.
    #[error("gradient is zero; the requested quantity is direction-dependent")]
    ZeroGradient,

    /// A routine that linearises about a critical point was called away from one.
    #[error("point is not an equilibrium (residual norm = {residual:.3e})")]
    NotEquilibrium { residual: f64 },

    /// The regularisation scheme is only defined for zero-sum games.
    #[error("this scheme requires a zero-sum game")]
    SchemeRequiresZeroSum,

    /// A player split does not partition the parameter vector.
    #[error("invalid player split: {0}")]
    BadSplit(String),

    /// Piecewise-linear analysis was requested for a non-ReLU model.
    #[error("model is not piecewise linear: {0}")]
    NotPiecewiseLinear(String),

    /// A least-squares fit was degenerate (too few or collinear points).
    #[error("order fit is degenerate: {0}")]
    DegenerateFit(String),

    /// A configuration value is out of range or inconsistent.
    #[error("bad configuration: {0}")]
    ConfigError(String),

    /// An experiment preset name was not recognised.
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

pub type Result<T> = std::result::Result<T, Error>;
