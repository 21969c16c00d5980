use thiserror::Error;

/// Errors raised by the library. The CLI maps each category to its own exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("point {index} at ({x}, {y}) lies outside the grid")]
    Assignment { index: usize, x: f64, y: f64 },

    #[error("covariate error: {0}")]
    Covariate(String),

    #[error("cholesky factorization failed: matrix not positive definite at jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("intensity overflow in cell {cell} (log intensity {log_intensity})")]
    Overflow { cell: usize, log_intensity: f64 },

    #[error("mcmc kernel error: {0}")]
    Kernel(String),

    #[error("chain aborted at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("glm error: {0}")]
    Glm(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined proportion: {0}")]
    Undefined(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code of the error's category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. } => 3,
            Error::Data(_) | Error::Assignment { .. } | Error::Geometry(_) | Error::Covariate(_) => 4,
            Error::Dimension(_) => 5,
            Error::Chain { .. }
            | Error::Factorization { .. }
            | Error::Overflow { .. }
            | Error::Kernel(_)
            | Error::Glm(_)
            | Error::Undefined(_) => 6,
        }
    }
}
