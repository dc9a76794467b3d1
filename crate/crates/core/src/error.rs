use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("vertex set would have 2^{exponent} vertices, above the cap of {cap}")]
    VertexCap { exponent: usize, cap: usize },
    #[error("data matrix [X0; U0] is rank deficient (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    RankDeficient { sigma_min: f64, sigma_max: f64 },
    #[error("no system is consistent with the data: {0}")]
    Inconsistent(String),
    #[error("LMI problem is infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid certificate: {0}")]
    Certificate(String),
    #[error("unsupported dimension: {0}")]
    Dimension(String),
    #[error("empty decrease set: {0}")]
    EmptyDecreaseSet(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 1 infeasible, 2 configuration or input data,
    /// 3 usage, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 1,
            Error::Dimension(_) => 3,
            Error::Numerical(_) | Error::Certificate(_) | Error::EmptyDecreaseSet(_) => 4,
            Error::Expr(_)
            | Error::Shape(_)
            | Error::VertexCap { .. }
            | Error::RankDeficient { .. }
            | Error::Inconsistent(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
        }
    }
}
