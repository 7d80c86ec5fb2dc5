use alloc::string::String;

/// Errors raised by the learning core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller passed data that violates an operation's preconditions.
    #[error("input contract violated: {0}")]
    InputContract(String),
    /// An operation was invoked in the wrong state (e.g. backward without forward).
    #[error("invalid state: {0}")]
    State(String),
    /// A non-finite gradient was found in a network layer.
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    /// A non-finite value appeared during a training computation.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
