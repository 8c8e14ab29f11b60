use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("attribute `{attribute}` does not support this operation: {reason}")]
    UnsupportedAttribute { attribute: String, reason: String },

    #[error("ambiguous reverse mapping for `{attribute}`: {}", format_collisions(.collisions))]
    Ambiguous {
        attribute: String,
        /// (value, keys sharing it)
        collisions: Vec<(String, Vec<String>)>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("held-out set shares {count} key(s) with the training set, e.g. `{example}`")]
    Contamination { count: usize, example: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("capacity search failed after {} probes: {reason}", .trace.len())]
    SearchFailure {
        reason: String,
        /// (|D|, MR) for every probe that ran
        trace: Vec<(usize, f64)>,
    },

    #[error("fit failed: {reason} (after {iterations} iterations)")]
    FitFailure { reason: String, iterations: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("target {target} is unreachable: the fitted law saturates at {limit}")]
    Unreachable { target: f64, limit: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("spec validation failed: {0}")]
    SpecValidation(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_collisions(collisions: &[(String, Vec<String>)]) -> String {
    collisions
        .iter()
        .map(|(v, keys)| format!("`{v}` <- [{}]", keys.join(", ")))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
