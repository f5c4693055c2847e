use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("index {index} out of range for horizon {horizon}")]
    IndexOutOfRange { index: usize, horizon: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("history length mismatch: need {needed} steps, have {available}")]
    HistoryMismatch { needed: usize, available: usize },
    #[error("integration blow-up at step {step}")]
    IntegrationBlowup { step: usize },
    #[error("non-finite adjoint at tape node {node}")]
    GradientBlowup { node: usize },
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("rejection sampling exhausted after {attempts} attempts")]
    RejectionBudget { attempts: usize },
    #[error("small-gain condition violated: margin {margin}")]
    ConditionViolated { margin: f64 },
    #[error("no admissible input pairs")]
    NoAdmissiblePairs,
    #[error("invalid configuration: {0}")]
    Config(String),
}
