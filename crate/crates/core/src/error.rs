use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter constraint violated: {constraint} ({detail})")]
    Constraint { constraint: String, detail: String },

    #[error("CFL condition violated: {0}")]
    Cfl(String),

    #[error("velocity not divergence-free: max |div u| = {max_div:.3e} exceeds {limit:.3e}")]
    Divergence { max_div: f64, limit: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("sensitivity bound violated: |S|_F = {norm:.6e} > C_S = {bound:.6e}")]
    SensitivityBound { norm: f64, bound: f64 },

    #[error("positivity budget exceeded: clipped mass {clipped:.3e} > budget {budget:.3e}")]
    PositivityBudget { clipped: f64, budget: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("infeasible certificate: {0}")]
    Infeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
