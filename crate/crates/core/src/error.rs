use thiserror::Error;

/// Errors surfaced by grid construction, potential constructors, transforms
/// and the envelope solver.
#[derive(Error, Debug)]
pub enum KglError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported singularity location: {0}")]
    UnsupportedSingularity(String),

    #[error("measure mass {got} does not match required total volume {want}")]
    MassMismatch { got: f64, want: f64 },

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("unbounded potential: operation requires a field with no BOTTOM values")]
    UnboundedPotential,

    #[error("hypothesis violation: {0}")]
    HypothesisViolation(String),

    #[error("obstacle solver failed to converge: residual {residual:.3e} after {sweeps} sweeps")]
    Convergence { residual: f64, sweeps: usize },

    #[error("singularity-type schedule exhausted without stabilization (last change {last_change:.3e})")]
    ScheduleExhausted { last_change: f64 },

    #[error("test line has empty finite domain")]
    EmptyDomain,

    #[error("window too small: {0}")]
    WindowTooSmall(String),

    #[error("invalid shift function: {0}")]
    InvalidShift(String),

    #[error("out of scope: {0}")]
    OutOfScope(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KglError>;
