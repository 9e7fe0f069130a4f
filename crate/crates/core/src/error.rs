use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("QCQP subproblem is infeasible")]
    Infeasible,

    #[error("QCQP solver hit the iteration limit (kkt residual {0:e})")]
    SolverMaxIter(f64),

    #[error("particle weights collapsed")]
    WeightCollapse,

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps `self` with the (1-based) time step at which it occurred.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Step { .. } => self,
            other => Error::Step {
                step,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "{what}: expected {expected}, got {got}"
        )));
    }
    Ok(())
}
