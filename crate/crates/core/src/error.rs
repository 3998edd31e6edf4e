//! Crate-wide error type.

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error for the control stack.
///
/// Variants are grouped by recovery semantics rather than by module: config,
/// shape, and IO problems are caller mistakes (CLI exit code 2), while
/// integration, training, and planning failures are numeric runtime faults
/// (CLI exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The derivative field produced a non-finite value during integration.
    /// `stage` is the Runge-Kutta stage index (1-4) that failed.
    #[error("non-finite derivative at integrator stage {stage}")]
    Integration { stage: usize },

    /// Input dimensions do not match the network architecture.
    #[error("model shape mismatch: {0}")]
    ModelShape(String),

    /// The training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// The planner could not produce a usable candidate batch.
    #[error("planner failure: {0}")]
    Planner(String),

    /// A candidate index fell outside the batch during control retrieval.
    #[error("mapping index {index} out of range for batch of {len}")]
    Mapping { index: usize, len: usize },

    /// Invalid configuration or scenario definition.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed serialized data (checkpoints, datasets, run logs).
    #[error("format error: {0}")]
    Format(String),

    /// Underlying filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl Error {
    /// True for errors caused by bad input (files, config, shapes) as
    /// opposed to numeric failures at runtime.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::ModelShape(_)
                | Error::Mapping { .. }
                | Error::Config(_)
                | Error::Format(_)
                | Error::Io(_)
        )
    }
}
