use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A forward-kernel column has a zero entry, so the ratio matrix is undefined.
    #[error("singular kernel: {0}")]
    SingularKernel(String),

    #[error("ill-conditioned ratio matrix (condition estimate {cond:.3e} > {limit:.1e})")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("singular ratio matrix: {0}")]
    Singular(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("distillation aborted: {skipped} of {total} iterations skipped (last error: {last_error})")]
    TooManySkipped {
        skipped: usize,
        total: usize,
        last_error: String,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for failures of floating-point computation rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_)
                | Error::SingularKernel(_)
                | Error::IllConditioned { .. }
                | Error::Singular(_)
                | Error::Degenerate(_)
                | Error::TooManySkipped { .. }
        )
    }
}
