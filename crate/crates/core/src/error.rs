//! Crate error type.

use thiserror::Error;

/// Errors produced by the simulator and decision library.
#[derive(Debug, Error)]
pub enum Error {
    /// A server spec has a non-positive capacity or bandwidth.
    #[error("invalid server spec: {0}")]
    InvalidSpec(String),

    /// A value violated a documented invariant (probability range, weight
    /// positivity, dimension bound, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vector dimension does not match the store dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Similarity query against a store with no entries.
    #[error("vector store is empty")]
    EmptyStore,

    /// Text produced no embeddable features (empty or degenerate input).
    #[error("no embeddable features in text")]
    ZeroFeatures,

    /// A belief update divided by a zero observation; the caller keeps the
    /// prior belief.
    #[error("degenerate observation: {0}")]
    DegenerateObservation(String),

    /// Allocation budget outside `0..=n`.
    #[error("budget {budget} out of range for {n} prompts")]
    BudgetOutOfRange { budget: usize, n: usize },

    /// Dataset file could not be read.
    #[error("cannot read dataset {path}: {source}")]
    DatasetIo {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Dataset line failed to parse or violated the record contract.
    #[error("{path}:{line}: {reason}")]
    DatasetRecord {
        path: String,
        line: usize,
        reason: String,
    },

    /// Corpus pool ran out of prompts for a stage draw.
    #[error("prompt pool exhausted: {0}")]
    PoolExhausted(String),

    /// Remote detector did not answer within the configured timeout.
    #[error("remote detector timed out")]
    RemoteTimeout,

    /// Remote detector answered with a non-200 status.
    #[error("remote detector returned status {0}")]
    RemoteStatus(u16),

    /// Remote detector response body did not match the wire contract.
    #[error("remote detector returned malformed body: {0}")]
    RemoteMalformedBody(String),

    /// Transport-level failure talking to the remote detector.
    #[error("remote detector transport error: {0}")]
    RemoteTransport(String),

    /// Simulation configuration failed validation; all violations listed.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    ConfigValidation(Vec<String>),
}
