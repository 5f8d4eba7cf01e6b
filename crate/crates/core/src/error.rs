use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singularity: {what} at {point}")]
    Singularity { what: String, point: Complex64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("extrapolation unstable: estimates disagree by {0:e}")]
    Instability(f64),
    #[error("not unitary: off-identity residual {0:e}")]
    NonUnitary(f64),
    #[error("orbit condition violated: residual {0:e}")]
    Orbit(f64),
    #[error("auxiliary solve failed: constraint residual {0:e}")]
    Solve(f64),
    #[error("periodicity violated: {0}")]
    Periodicity(String),
    #[error("degenerate orbit: pairing (eta, xi) = {0}")]
    DegenerateOrbit(Complex64),
    #[error("non-finite values: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn singular(what: impl Into<String>, point: Complex64) -> LabError {
    LabError::Singularity {
        what: what.into(),
        point,
    }
}
