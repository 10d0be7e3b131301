use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} is not supported (need n >= 2)")]
    Dimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid cutoff: {0}")]
    Cutoff(String),

    #[error("metric is not positive definite at node {node} (min eigenvalue {min_eig:e})")]
    NotPositive { node: usize, min_eig: f64 },

    #[error("metric differs from the flat metric inside the protected region at node {0}")]
    LeavesFlatRegion(usize),

    #[error("metric is singular at node {0}")]
    SingularMetric(usize),

    #[error("operator not invertible (gap {gap:e} <= threshold {threshold:e})")]
    NotInvertible { gap: f64, threshold: f64 },

    #[error("linear solve stalled after {iterations} iterations (relative residual {residual:e})")]
    SolveBudget { iterations: usize, residual: f64 },

    #[error("eigensolver did not converge after {restarts} restarts (worst residual {residual:e})")]
    EigenBudget { restarts: usize, residual: f64 },

    #[error("rational fit: {0}")]
    Fit(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the numerical machinery rather than by the input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NotInvertible { .. } | Error::SolveBudget { .. } | Error::EigenBudget { .. }
        )
    }
}
