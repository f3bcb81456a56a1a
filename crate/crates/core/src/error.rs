use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("inclusion not contained in the cell: r + 1/n_y = {0} >= 0.5")]
    Containment(f64),
    #[error("pore region is not connected ({components} components)")]
    Disconnected { components: usize },
    #[error("grid too large: {cells} cells exceeds the limit {limit}")]
    GridTooLarge { cells: usize, limit: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("right-hand side incompatible with the Neumann problem: mean {mean:e}")]
    Incompatible { mean: f64 },
    #[error("iteration did not converge: {iterations} iterations, residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("solver breakdown: {0}")]
    Breakdown(String),
    #[error("field does not belong to this grid: {0}")]
    Mismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
