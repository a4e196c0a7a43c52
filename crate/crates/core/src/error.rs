use thiserror::Error;

/// Errors surfaced by the propagation, update, and oracle routines.
///
/// Numerical degeneracies that have a well-defined safe outcome (a presynaptic
/// norm below the clamp threshold, for instance) are not errors; they produce
/// flagged zero updates instead. Everything here is a genuine failure.
#[derive(Debug, Clone, Error)]
pub enum DtpError {
    #[error("layer index {layer} out of range for a network with {layer_count} layers")]
    LayerOutOfRange { layer: usize, layer_count: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },

    #[error("iteration produced non-finite values after {iterations} steps")]
    NonFiniteIteration { iterations: usize },

    #[error(
        "iteration is not contracting{} (estimated alpha {estimated_alpha:.6} after {iterations} iterations)",
        layer.map(|l| format!(" at layer {l}")).unwrap_or_default()
    )]
    NonContractive {
        layer: Option<usize>,
        estimated_alpha: f64,
        iterations: usize,
    },

    #[error("contraction estimate needs at least 3 recorded increments, got {got}")]
    InsufficientIterations { got: usize },

    #[error("singular linear system: smallest eigenvalue {smallest:.3e}")]
    SingularSystem { smallest: f64 },

    #[error("weight matrix at layer {layer} is near singular (condition number {condition:.3e})")]
    NearSingularWeight { layer: usize, condition: f64 },

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, DtpError>;
