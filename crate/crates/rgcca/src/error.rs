use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading data, validating a model
/// description or running the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file. `line` is 1-based and counts the header.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("block {block}: expected {expected} rows, found {found}")]
    RowMismatch {
        block: usize,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {message}")]
    Shape { message: String },

    #[error("invalid configuration: {message}")]
    Config { message: String },

    #[error("unsupported inner weighting scheme {requested:?}: only the identity (horst) scheme is implemented")]
    UnsupportedScheme { requested: String },

    #[error("block {block}: constraint matrix is identically zero (tau = 0 and the data has rank 0)")]
    ZeroConstraintMatrix { block: usize },

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("ellipsoid projection did not converge within {max_iter} Newton steps (last step size {last_step:e})")]
    NewtonStalled { max_iter: usize, last_step: f64 },

    #[error("operator norm estimate did not stabilise within {max_iter} iterations (last lower bound {bound:e})")]
    PowerIteration { max_iter: usize, bound: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("{context}: {message}")]
    Evaluation { context: String, message: String },
}
