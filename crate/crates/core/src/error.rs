use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer received data of the wrong shape.
    #[error("{}shape mismatch in {what}: expected {expected:?}, got {actual:?}", layer_prefix(.layer))]
    Shape {
        layer: Option<usize>,
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// API misuse (non-scalar loss, variable from a different tape, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("model file format: {0}")]
    Format(String),

    #[error("unsupported model file version {found} (reader supports {supported})")]
    Version { found: u32, supported: u32 },

    #[error("model file checksum mismatch")]
    Checksum,

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("counterfactual search failed at iteration {iteration}: {message}")]
    Explain { iteration: usize, message: String },

    #[error("window is not anomalous (score {score} <= threshold {threshold})")]
    NotAnomalous { score: f64, threshold: f64 },

    #[error("empty input: {0}")]
    Empty(String),
}

fn layer_prefix(layer: &Option<usize>) -> String {
    match layer {
        Some(i) => format!("layer {i}: "),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            layer: None,
            what: what.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a layer index to a shape error.
    pub(crate) fn at_layer(self, index: usize) -> Self {
        match self {
            Error::Shape {
                what,
                expected,
                actual,
                ..
            } => Error::Shape {
                layer: Some(index),
                what,
                expected,
                actual,
            },
            Error::Config(msg) => Error::Config(format!("layer {index}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
