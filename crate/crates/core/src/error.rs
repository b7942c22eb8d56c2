use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cell index {index:?} outside a {n}-cell lattice")]
    Bounds { index: [usize; 3], n: usize },

    #[error("out of acceptance: {0}")]
    OutOfAcceptance(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("event has {n_hits} hits but capacity is {max_points}")]
    Capacity { n_hits: usize, max_points: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("numeric error at {context}: {detail}")]
    Numeric { context: String, detail: String },

    #[error("score is singular at t = {0} (sigma_t = 0)")]
    SingularTime(f64),

    #[error("DDIM step requires s < t, got s = {s}, t = {t}")]
    Ordering { s: f64, t: f64 },

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged {
        step: usize,
        loss: f64,
        last_good: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
