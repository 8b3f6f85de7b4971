use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message} (expected one of: {})", expected.join(", "))]
    Syntax {
        offset: usize,
        message: String,
        expected: Vec<String>,
    },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
    #[error("order function value {value} at (t={t}, tau={tau}) is outside (0, 1)")]
    OrderRange { t: f64, tau: f64, value: f64 },
    #[error("non-finite integrand value {value} at s={node}")]
    NonFinite { node: f64, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("inconsistent derivative: {0}")]
    Consistency(String),
    #[error("solver failed: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(expr: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Domain {
            expr: expr.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that stem from user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Syntax { .. }
                | Error::UnknownFunction { .. }
                | Error::UnboundVariable(_)
                | Error::Config(_)
                | Error::Problem(_)
                | Error::Consistency(_)
                | Error::OrderRange { .. }
        )
    }
}
