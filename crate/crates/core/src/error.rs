use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: {context}")]
    InputShape { context: String },

    #[error("exp overflow at row {index}: logit {value} exceeds the f64 exp range")]
    Overflow { index: usize, value: f64 },

    #[error("non-finite value encountered in {context}")]
    Numerical { context: String },

    #[error("hessian asymmetry {asymmetry:.3e} exceeds relative tolerance {tolerance:.1e}")]
    Symmetry { asymmetry: f64, tolerance: f64 },

    #[error("degenerate weight at row {index} (value {value}): {context}")]
    DegenerateWeight {
        index: usize,
        value: f64,
        context: String,
    },

    #[error("rank deficiency: {context}")]
    Rank { context: String },

    #[error("hessian not positive definite at iteration {iteration}")]
    IndefiniteHessian { iteration: usize },

    #[error("precondition violated: {context}")]
    Precondition { context: String },

    #[error("invalid configuration: {context}")]
    Config { context: String },

    #[error("parse error in {path} (line {line}, column {column}): {detail}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        detail: String,
    },

    #[error("schema version {found} does not match expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>) -> Self {
        Error::InputShape {
            context: context.into(),
        }
    }

    pub(crate) fn numerical(context: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
        }
    }

    pub(crate) fn config(context: impl Into<String>) -> Self {
        Error::Config {
            context: context.into(),
        }
    }

    pub(crate) fn precondition(context: impl Into<String>) -> Self {
        Error::Precondition {
            context: context.into(),
        }
    }
}
