use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice box: {0}")]
    InvalidBox(String),
    #[error("site {site:?} is outside the box")]
    SiteOutsideBox { site: Vec<i64> },
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("potential fails the stability bound: {0}")]
    Unstable(String),
    #[error("invalid mode basis: {0}")]
    InvalidBasis(String),
    #[error("evaluation grid of {grid} points is too coarse for n_max = {n_max} (need at least {required})")]
    GridTooCoarse { grid: usize, n_max: usize, required: usize },
    #[error("coefficient vector has {got} entries, basis expects {expected}")]
    CoefficientLength { got: usize, expected: usize },
    #[error("perturbation at site {site:?} has nonzero constant mode {value}")]
    NonzeroMean { site: Vec<i64>, value: f64 },
    #[error("boundary condition is missing exterior site {site:?} within interaction range")]
    MissingBoundarySite { site: Vec<i64> },
    #[error("energy context mismatch: {0}")]
    ContextMismatch(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("observable {0} is not invariant on time-average classes")]
    NotClassInvariant(String),
    #[error("quadrature instance too large: {0}")]
    Intractable(String),
    #[error("invalid sampler parameters: {0}")]
    InvalidParameters(String),
    #[error("hypotheses not met: {0}")]
    HypothesesNotMet(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
