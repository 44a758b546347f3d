use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("layer {index} ({kind}) cannot accept input of shape {shape:?}: {reason}")]
    IncompatibleLayer {
        index: usize,
        kind: String,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("backward called without a retained training forward pass")]
    NoForwardPass,
    #[error("non-finite value in {what} (parameter tensor {tensor}, element {element})")]
    NonFinite {
        what: &'static str,
        tensor: usize,
        element: usize,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
