//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Errors carry
//! enough context (paths, line numbers, client ids, stage names) that a
//! pipeline failure can be traced to its source without a debugger.

use std::path::PathBuf;

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented domain.
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// Underlying I/O failure, tagged with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text or JSON input could not be parsed. `line` is 1-based and 0
    /// when the failure is not tied to a specific line.
    #[error("parse error in {path}{}: {reason}", fmt_line(*.line))]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// A sample vector, matrix entry, or model parameter was NaN/infinite
    /// where a finite value is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Vector or matrix dimensions disagree.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A dataset, cluster, or evaluation set that must be non-empty is empty.
    #[error("empty input: {context}")]
    EmptyInput { context: String },

    /// The retry budget for Dirichlet partitioning was exhausted without
    /// every client reaching its minimum shard size.
    #[error(
        "partition infeasible: {attempts} draws never gave every client \
         >= {min_samples} samples (pool of {pool_size})"
    )]
    PartitionInfeasible {
        attempts: usize,
        min_samples: usize,
        pool_size: usize,
    },

    /// A clustering stop rule that cannot be satisfied (K = 0, K > n, Θ < 0).
    #[error("invalid stop rule: {reason}")]
    InvalidStopRule { reason: String },

    /// A federated cluster whose members hold no training data at all.
    #[error("cluster {cluster} has no training samples across its members")]
    EmptyCluster { cluster: usize },

    /// Training diverged: loss or a parameter became non-finite.
    #[error("training diverged at round {round}, client {client}: {detail}")]
    Diverged {
        round: usize,
        client: usize,
        detail: String,
    },

    /// Wraps an error with the pipeline stage and seed it occurred under.
    #[error("stage {stage} (seed {seed}): {source}")]
    Stage {
        stage: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap `self` with the stage and seed it occurred under. An error that
    /// already carries a stage keeps it: the innermost tag is the precise
    /// one, and callers higher up the pipeline re-tag freely.
    pub fn in_stage(self, stage: &'static str, seed: u64) -> Error {
        if matches!(self, Error::Stage { .. }) {
            return self;
        }
        Error::Stage {
            stage,
            seed,
            source: Box::new(self),
        }
    }

    /// Convenience constructor for I/O errors.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn fmt_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(":{line}")
    }
}

/// Shorthand for `Error::InvalidConfig` with a formatted reason.
macro_rules! invalid {
    ($field:expr, $($arg:tt)*) => {
        $crate::error::Error::InvalidConfig {
            field: $field,
            reason: format!($($arg)*),
        }
    };
}
pub(crate) use invalid;
