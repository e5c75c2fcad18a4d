use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    InputShape { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported primitive `{0}`")]
    Capability(String),

    #[error("numeric divergence at iteration {iteration}: {context}")]
    Divergence { iteration: usize, context: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("integrity error: disclosed prediction {disclosed} but model gives {actual}")]
    Integrity { disclosed: f64, actual: f64 },

    #[error("degenerate posterior: every candidate has zero weight")]
    DegeneratePosterior,

    #[error("outcome simulator has not been fitted")]
    UninitializedSimulator,

    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("invalid probe domain: {0}")]
    InvalidDomain(String),

    #[error("harmful-cost construction failed: {0}")]
    ConstructionFailed(String),

    #[error("induced response is harmful for agent {agent}: u(x) = {response} < u(base) = {base}")]
    NotNonHarmful {
        agent: usize,
        response: f64,
        base: f64,
    },

    #[error("normalization constant is zero")]
    Normalization,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::InputShape { expected, actual })
    }
}
