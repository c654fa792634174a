use thiserror::Error;

use crate::bfm::DualState;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid must be square with at least 4 cells per side (got {nx}x{ny})")]
    BadGrid { nx: usize, ny: usize },

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at cell {0}")]
    NonFinite(usize),

    #[error("density value {value} at cell {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("phase pair violates rho1 + rho2 = 1 at cell {index} (sum {sum})")]
    NotIncompressible { index: usize, sum: f64 },

    #[error("phase field is not characteristic (cell {0} is fractional)")]
    NotCharacteristic(usize),

    #[error("a phase has zero mass")]
    EmptyPhase,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("c-transform input is +inf everywhere")]
    AllInfinite,

    #[error("target mass {mass} is not attainable on this grid")]
    Unreachable { mass: f64 },

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("instance too large for the oracle: {cells} cells (cap {cap})")]
    TooLarge { cells: usize, cap: usize },

    #[error("step callback failed: {0}")]
    Callback(String),

    #[error("dual solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        state: Box<DualState>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
