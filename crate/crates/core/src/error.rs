//! Error types shared across the planner.

use thiserror::Error;

/// Errors raised by lane geometry queries.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("arc length {s} outside the valid interval [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
    #[error("ambiguous projection of point ({x}, {y}) onto the lane")]
    AmbiguousProjection { x: f64, y: f64 },
    #[error("invalid lane: {0}")]
    InvalidLane(String),
}

/// Errors raised by the chance-constraint routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChanceError {
    #[error("probability {0} outside the open interval (0, 1)")]
    Domain(f64),
    #[error("grid mismatch: expected {expected} nodes, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid chance parameters: {0}")]
    Invalid(String),
}

/// Errors raised while assembling or evaluating a transcribed program.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscribeError {
    #[error("decision vector has length {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("initial state violates {constraint} by {amount}")]
    InfeasiblePin { constraint: String, amount: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("scenario does not cover the grid: {0}")]
    Coverage(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors raised by the NLP solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("initial point has length {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("invalid solver options: {0}")]
    Options(String),
}

/// Errors raised when building or loading scenarios.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    /// `path` is the offending JSON path, e.g. `limits.v_r`.
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("malformed scenario JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl ScenarioError {
    pub(crate) fn invalid(path: &str, message: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

/// Errors raised by the experiment harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("grid mismatch: expected {expected} nodes, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid experiment input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Transcribe(#[from] TranscribeError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
