use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("domain vectors are linearly dependent (rank {rank} < {count})")]
    DependentDomain { rank: usize, count: usize },

    #[error(
        "ill-conditioned deficiency: singular value ratio {ratio:e} lies within a factor 10 of the rank tolerance {tol:e}"
    )]
    IllConditionedDeficiency { ratio: f64, tol: f64 },

    #[error("extension domain not dense: Im(Q+E) has rank {rank} < {dim}")]
    ExtensionDomainNotDense { rank: usize, dim: usize },

    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),

    #[error("extend the operator first: generator domain has dimension {domain} < {dim}")]
    NotFullDomain { domain: usize, dim: usize },

    #[error("singular step matrix E - (dt/2)B; the generator is not dissipative")]
    SingularStep,

    #[error("linear solver stalled at relative residual {residual:e} after {iterations} iterations")]
    SolverStalled { residual: f64, iterations: usize },

    #[error("forward problem unique: deficiency index d_minus is zero")]
    ForwardProblemUnique,

    #[error("semigroup unique: the operator is maximal (zero deficiency)")]
    SemigroupUnique,

    #[error("inclusion B in A* fails: max defect {defect:e} exceeds {tol:e}")]
    InclusionFailed { defect: f64, tol: f64 },

    #[error("test-function horizon {family} exceeds candidate horizon {candidate}")]
    HorizonExceeded { family: f64, candidate: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field file: {0}")]
    FieldFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
