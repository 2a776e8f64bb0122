use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid jump map: {0}")]
    InvalidJumpMap(String),

    #[error("modulus {modulus:.3e} at node {node} is below the lifting threshold {threshold:.3e}")]
    VanishingModulus {
        node: usize,
        modulus: f64,
        threshold: f64,
    },

    #[error("phase increment {increment:.4} between nodes {node} and {} is too large to lift", node + 1)]
    Aliasing { node: usize, increment: f64 },

    #[error("winding number undefined: {0}")]
    UndefinedWinding(String),

    #[error("solver diverged after {iterations} iterations (last finite energy {last_energy})")]
    Divergence { iterations: usize, last_energy: f64 },

    #[error("grid resolution insufficient: {0}")]
    Resolution(String),

    #[error("jump transitions overlap: {0}")]
    Overlap(String),

    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("extrapolation failed: {0}")]
    NoFit(String),

    #[error("every start failed: {0}")]
    AllStartsFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
