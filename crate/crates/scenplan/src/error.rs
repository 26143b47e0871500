//! Crate-wide error type.

use thiserror::Error;

/// Identifies one obstacle polytope inside a plan: horizon step `t` (1-based),
/// obstacle vehicle index `ov` (0-based), and cluster id `cluster` (1-based;
/// 0 for scenario-method constraints, which are not cluster-specific).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRef {
    pub t: usize,
    pub ov: usize,
    pub cluster: usize,
}

impl std::fmt::Display for BlockRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(t={}, ov={}, cluster={})", self.t, self.ov, self.cluster)
    }
}

/// Errors produced by the planning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computed sample count would exceed the guard threshold (10^9).
    #[error("sample-count overflow: required sample count {required:.3e} exceeds the 1e9 guard")]
    SampleCountOverflow { required: f64 },

    /// Clustering was asked for more clusters than distinct points, or a
    /// cluster ended up empty where that is not permitted.
    #[error("degenerate clustering input: {0}")]
    DegenerateClustering(String),

    /// Label-based clustering was requested but a sample carries no mode label.
    #[error("missing mode label on sample {sample} (ov {ov})")]
    MissingLabel { sample: usize, ov: usize },

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The LP solver stalled or lost numerical control.
    #[error("numerical failure in LP solve: {0}")]
    NumericalFailure(String),

    /// Branch-and-bound exhausted its node budget.
    #[error(
        "branch-and-bound node budget of {budget} exceeded \
         (incumbent: {incumbent:?}, remaining gap: {gap:?})"
    )]
    NodeBudgetExceeded {
        budget: usize,
        incumbent: Option<f64>,
        gap: Option<f64>,
    },

    /// Brute-force enumeration refused an oversized binary set.
    #[error("brute-force enumeration supports at most 20 binaries, got {0}")]
    TooManyBinaries(usize),

    /// The optimization problem admits no feasible trajectory. When the cause
    /// is identifiable, `blocking` lists obstacle polytopes that cover the
    /// entire reachable output set on their own.
    #[error("no feasible trajectory exists{}", format_blocking(.blocking))]
    Infeasible { blocking: Vec<BlockRef> },

    /// The optimization problem is unbounded (objective decreases without limit).
    #[error("optimization problem is unbounded")]
    Unbounded,

    /// A sample file failed to parse.
    #[error("parse error at line {line}{}: {message}", field_suffix(.field))]
    Parse {
        line: usize,
        field: Option<&'static str>,
        message: String,
    },

    /// A configuration document violated the schema.
    #[error("configuration error: {0}")]
    Config(String),

    /// A sample set's horizon or obstacle count does not match the model.
    #[error("horizon mismatch: {0}")]
    HorizonMismatch(String),

    /// Underlying I/O failure.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn format_blocking(blocking: &[BlockRef]) -> String {
    if blocking.is_empty() {
        String::new()
    } else {
        let list: Vec<String> = blocking.iter().map(|b| b.to_string()).collect();
        format!("; blocking obstacle sets: {}", list.join(", "))
    }
}

fn field_suffix(field: &Option<&'static str>) -> String {
    match field {
        Some(f) => format!(", field `{f}`"),
        None => String::new(),
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for I/O errors tagged with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
