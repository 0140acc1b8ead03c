use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape touches the hold-all boundary: {0}")]
    TouchesBoundary(String),

    #[error("empty domain description")]
    EmptyDescription,

    #[error("perturbation size {eps} is not resolvable on a grid with h = {h} (need eps > 2h)")]
    Unresolvable { eps: f64, h: f64 },

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("infeasible control box: {0}")]
    Infeasible(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("at params {params:?}: {source}")]
    AtParams {
        params: Vec<f64>,
        #[source]
        source: Box<LabError>,
    },

    #[error("study aborted at eps = {eps}: {source}")]
    StudyAborted {
        eps: f64,
        #[source]
        source: Box<LabError>,
    },

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("io error: {0}")]
    Io(String),
}

impl LabError {
    /// True for failures of a numerical method, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            LabError::NoConvergence { .. } => true,
            LabError::AtParams { source, .. } | LabError::StudyAborted { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
