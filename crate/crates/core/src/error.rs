use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infinite tail mass: truncation level {kappa} is not admissible for an infinite-activity measure")]
    InfiniteMass { kappa: f64 },

    #[error("cannot sample jumps above kappa = {kappa}: tail mass is {tail_mass}")]
    CannotSample { kappa: f64, tail_mass: f64 },

    #[error("invalid measure parameters: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular diffusion matrix at t = {t}, x = {x:?} (condition estimate {condition:e})")]
    SingularDiffusion { t: f64, x: Vec<f64>, condition: f64 },

    #[error("quadrature did not converge: estimated error {achieved:e} above tolerance {requested:e}")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("empty sample batch")]
    EmptyBatch,

    #[error("missing MCQ estimate for control (alpha #{alpha}, beta #{beta})")]
    MissingControl { alpha: usize, beta: usize },

    #[error("problem contract violated: {0}")]
    Contract(String),

    #[error("kappa search failed: {0}")]
    KappaSearch(String),

    #[error("non-finite value at layer {layer}, node {node} (x = {x:?})")]
    NonFinite { layer: usize, node: usize, x: Vec<f64> },

    #[error("no oracle available for problem `{0}`")]
    NoOracle(String),

    #[error("oracle did not converge: {0}")]
    OracleNonConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
