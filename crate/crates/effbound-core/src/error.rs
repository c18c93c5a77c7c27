use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall into three groups: usage errors (bad input), rejections
/// (the functional or model lies outside the regular regime), and numerical
/// failures (grid too coarse, series divergence).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("point {x} lies outside the grid span [{lo}, {hi}]")]
    OutsideGrid { x: f64, lo: f64, hi: f64 },
    #[error("jump measure violates the finite-variation condition: {0}")]
    Divergent(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("characteristic function underflows on the grid (|phi| = {min_abs:e})")]
    Underflow { min_abs: f64 },
    #[error(
        "beta_hat = {beta_hat:.3} >= 1/2: parametric rate unavailable for indicator functionals"
    )]
    ParametricRateUnavailable { beta_hat: f64 },
    #[error("functional not in ran A*: {0}")]
    OutOfRange(String),
    #[error("function is not centered (mean {mean:e}, tolerance {tol:e})")]
    NotCentered { mean: f64, tol: f64 },
    #[error("functional not regular: residual {residual:e} outside the range of K^T")]
    NotRegular { residual: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("measure is not normalized (total mass {mass})")]
    NotNormalized { mass: f64 },
    #[error("series divergence: {0}")]
    SeriesDivergence(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl EffError {
    /// True for errors that mean "no regular estimator exists" rather than a
    /// usage mistake or a numerical failure.
    pub fn is_rejection(&self) -> bool {
        matches!(
            self,
            EffError::ParametricRateUnavailable { .. }
                | EffError::OutOfRange(_)
                | EffError::NotRegular { .. }
                | EffError::Underflow { .. }
        )
    }

    /// True for errors caused by invalid user input.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            EffError::InvalidInput(_)
                | EffError::InvalidGrid(_)
                | EffError::GridMismatch(_)
                | EffError::Unsupported(_)
                | EffError::NotCentered { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, EffError>;
