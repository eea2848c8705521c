use thiserror::Error;

/// Errors raised by the solver, the deterministic-equivalent engine and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// `λ = 0` while the common component is nonzero.
    #[error("infinite penalty: lambda is 0 but the common weights are nonzero")]
    InfinitePenalty,

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    FixedPointNonConvergence { iterations: usize, residual: f64 },

    /// `I_T - Ψ/(Td)` is singular or not positive: the asymptotic regime is invalid.
    #[error("phase boundary: {0}")]
    PhaseBoundary(String),

    #[error("kappa inversion did not converge (relative residual {residual:e})")]
    KappaInversion { residual: f64 },

    #[error("regime failure: {0}")]
    RegimeFailure(String),
}

impl Error {
    /// Stable process exit code for this error class: 2 input, 3 numerical, 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::InfinitePenalty => 2,
            Error::NumericalBreakdown(_) | Error::PhaseBoundary(_) | Error::RegimeFailure(_) => 3,
            Error::FixedPointNonConvergence { .. } | Error::KappaInversion { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
