use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside {range}")]
    Range {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model rejected: {0}")]
    ModelRejected(String),

    #[error("non-finite state in path {path} at step {step}")]
    Simulation { path: u64, step: usize },

    #[error("solver did not converge after {sweeps} sweeps (last residual {last:.3e})")]
    Solver {
        sweeps: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("boundary escapes the grid at x = {x}: {detail}")]
    BoundaryEscape { x: f64, detail: String },

    #[error("derivative of order {requested} requested, coefficient supports {available}")]
    Capability { requested: usize, available: usize },

    #[error("incompatible inputs: {0}")]
    Comparison(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
