use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dataset: csv parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dataset: {0}")]
    Data(String),

    #[error("dataset: column `{column}`, row {row}: {message}")]
    Cell {
        column: String,
        row: u64,
        message: String,
    },

    #[error("dataset: roles not assigned")]
    RolesMissing,

    #[error("{context}: rank-deficient design, collinear columns: {}", columns.join(", "))]
    RankDeficient {
        context: &'static str,
        columns: Vec<String>,
    },

    #[error("{method}: did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        method: String,
        iterations: usize,
        residual: f64,
    },

    #[error("{method}: target moments outside convex hull ({constraint})")]
    Infeasible { method: String, constraint: String },

    #[error("{context}: {message}")]
    Degenerate {
        context: &'static str,
        message: String,
    },

    #[error("{context}: invalid argument: {message}")]
    InvalidArgument {
        context: &'static str,
        message: String,
    },

    #[error("job cancelled")]
    Cancelled,
}

impl Error {
    pub(crate) fn degenerate(context: &'static str, message: impl Into<String>) -> Self {
        Error::Degenerate {
            context,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(context: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            context,
            message: message.into(),
        }
    }
}
