use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure broke down (factorization, overflow, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Picard iteration did not reach its tolerance.
    #[error("no convergence after {} iterations (last residual {:.3e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    Convergence { residuals: Vec<f64> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
