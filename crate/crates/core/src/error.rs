use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gradient requested for a non-scalar output with shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("non-finite function value {value} at coordinate {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("{family} is not reparameterizable; draw with `sample` instead")]
    NotReparameterizable { family: &'static str },

    #[error("conditional is not reparameterizable; train it with the conjugate score-gradient estimator")]
    UseConjugate,

    #[error("no conjugate hooks for this conditional: {0}")]
    MissingHooks(String),

    #[error("upper bound requires K >= 1")]
    UpperBoundNeedsK,

    /// `trace` holds the finite bound values recorded before the failure.
    #[error("surrogate bound became NaN at iteration {iteration}")]
    NanBound { iteration: usize, trace: Vec<f64> },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("empty sample")]
    EmptySample,

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
