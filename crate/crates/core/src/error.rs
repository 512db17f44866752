//! Error type shared by all simulator modules.

use alloc::string::String;
use thiserror::Error;

/// Failure categories surfaced by the simulator.
///
/// The CLI maps these onto its exit-code contract: configuration problems
/// are validation failures, `NonFinite` is a numeric abort.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    /// Operand dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// A scalar argument is outside its legal range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// An object was used outside its valid lifecycle (stale cache,
    /// missing snapshot).
    #[error("state error: {0}")]
    State(String),
    /// The experiment configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// A loss became NaN or infinite; the message carries the diagnostic
    /// context (strategy, epoch, phase, client).
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, SimError>;
