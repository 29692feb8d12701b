use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is not connected ({components} components)")]
    Disconnected { components: usize },

    #[error("random geometric graph with {n} nodes still disconnected after {attempts} draws")]
    GenerationFailed { n: usize, attempts: usize },

    #[error("({0}, {1}) is not an edge of the graph")]
    InvalidEdge(usize, usize),

    #[error("edge index {index} out of range for a graph with {edges} edges")]
    EdgeIndexOutOfRange { index: usize, edges: usize },

    #[error("row {0} of the system is zero")]
    SingularRow(usize),

    #[error("system has no solution (least-squares residual {residual:e})")]
    NoSolution { residual: f64 },

    #[error("every eigenvalue is below the zero cutoff")]
    DegenerateSpectrum,

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
