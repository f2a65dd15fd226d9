use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("calendar error: {0}")]
    Calendar(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no ESG score released for {ticker} on or before {date}")]
    NoScore { ticker: String, date: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("matrix not positive definite: {0}")]
    Singular(String),

    #[error("optimization problem is infeasible: {0}")]
    Infeasible(String),

    #[error("solver stopped at a numerical limit after {iterations} iterations: {message}")]
    NumericLimit { iterations: u32, message: String },

    #[error("date alignment error: {0}")]
    Alignment(String),

    #[error("no tangent portfolio: {0}")]
    NoTangent(String),

    #[error("sample too small: need at least {needed} observations, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("spot {spot} outside the hull of discounted terminal prices [{lo}, {hi}]")]
    InfeasibleMartingale { spot: f64, lo: f64, hi: f64 },

    #[error("option value {value} violates no-arbitrage bounds [{lower}, {upper}]")]
    OutOfBounds { value: f64, lower: f64, upper: f64 },

    #[error("root finding did not converge: {0}")]
    NoConvergence(String),

    #[error("window too short: need at least {needed} observations, got {got}")]
    WindowTooShort { needed: usize, got: usize },

    #[error("cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("linear system is singular (condition number {condition:.3e})")]
    SingularSystem { condition: f64 },
}

impl Error {
    /// True for errors caused by bad inputs (files, shapes, parameter ranges)
    /// rather than by a computation that failed on valid inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Calendar(_)
                | Error::Domain(_)
                | Error::NoScore { .. }
                | Error::Shape(_)
                | Error::Precondition(_)
                | Error::Alignment(_)
                | Error::WindowTooShort { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
