use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate wells: both wells sit at {0}")]
    DegenerateWells(f64),
    #[error("well at {well} is not a nondegenerate minimum (W'' = {second_derivative})")]
    NondegenerateWellViolation { well: f64, second_derivative: f64 },
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("overflow guard: exp({exponent}) exceeds the float range, reduce T")]
    OverflowGuard { exponent: f64 },
    #[error("compatibility violation: |<f, w*>| = {residual:e} exceeds {tolerance:e}")]
    CompatibilityViolation { residual: f64, tolerance: f64 },
    #[error("resolution error: {0}")]
    ResolutionError(String),
    #[error("tube violation: {0}")]
    TubeViolation(String),
    #[error("Newton diverged at iteration {iteration} (scaled residual {residual:e}){context}")]
    NewtonDivergence {
        iteration: usize,
        residual: f64,
        context: String,
    },
    #[error("interface left the a-priori box: {0}")]
    BoxViolation(String),
    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),
    #[error("Jacobi operator is degenerate in the declared symmetry class: {0}")]
    JacobiSingular(String),
    #[error("contraction failure at iteration {iteration} (residual {residual:e})")]
    ContractionFailure { iteration: usize, residual: f64 },
    #[error("empty nodal set: the field has no sign change")]
    EmptyNodalSet,
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("solver failed at eps = {eps}: {source}")]
    AtEps {
        eps: f64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
