use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dynamics domain error: {0}")]
    Domain(String),

    #[error("simulation failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("enumeration budget exceeded: {count} sequences > {budget}")]
    Budget { count: f64, budget: usize },

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("learner error: {0}")]
    Learner(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
