use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("divergent integral: {0}")]
    Divergence(String),

    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("step size too large at t = {time}: {detail}; retry with a smaller theta")]
    StepSize { time: f64, detail: String },

    #[error("study error: {0}")]
    Study(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
