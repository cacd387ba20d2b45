//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Errors are grouped by
//! the contract they violate: malformed input, incompatible parameters,
//! domain restrictions of a formula, degenerate geometry, or resource limits
//! of a numerical backend.

use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum DlmlError {
    /// A textual or JSON encoding could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// An input violates a structural invariant (bad label, level mismatch,
    /// non-normalized word, lamp state out of range, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two arguments belong to incompatible structures (different branching
    /// numbers, different graphs, mismatched quadratic extensions).
    #[error("incompatible arguments: {0}")]
    Incompatible(String),

    /// The requested quantity is not defined for these parameters
    /// (e.g. a drifted-only formula at alpha = 1/2, or a boundary kernel on
    /// the wrong compactification).
    #[error("domain error: {0}")]
    Domain(String),

    /// A geometric configuration is degenerate for the requested formula
    /// (zero span, both barrier distances zero, equal endpoints).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A numerical backend exceeded its configured resource limits.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A numerical computation failed to reach its target accuracy.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An estimator produced no usable value (e.g. a Monte Carlo denominator
    /// of zero when forming a kernel ratio).
    #[error("indeterminate result: {0}")]
    Indeterminate(String),

    /// Underlying I/O failure (file output from the CLI drivers).
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, DlmlError>;
