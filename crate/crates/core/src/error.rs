use thiserror::Error;

/// Errors produced anywhere in the prediction and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in matrix input")]
    NonFinite,

    #[error("matrix is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("polynomial is not self-adjoint")]
    NotSelfAdjoint,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {0} lies on the support of the measure")]
    OnSupport(num_complex::Complex64),

    #[error("z = {z} lies in the support of the limiting spectral measure (Im-excess {excess:.3e})")]
    InSupport { z: f64, excess: f64 },

    #[error("imaginary part of the base point is not positive definite")]
    NonPositiveImaginary,

    #[error("winding number {winding:.4} around {rho} is not close to an integer")]
    WindingNotIntegral { rho: f64, winding: f64 },

    #[error("no sign change of the outlier determinant on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("outlier at {rho} has multiplicity {multiplicity}; only simple outliers are supported")]
    Multiplicity { rho: f64, multiplicity: usize },

    #[error("negative fluctuation variance (term1 {term1:.6e}, term2 {term2:.6e})")]
    NegativeVariance { term1: f64, term2: f64 },

    #[error("{what} has imaginary residue {value:.3e}")]
    ImaginaryResidue { what: &'static str, value: f64 },

    #[error("{excluded} of {trials} trials excluded (more than 20%)")]
    ExcludedFraction { excluded: usize, trials: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
