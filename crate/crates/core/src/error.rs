use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("exact oracle limited to 22 effective coordinates, got {0}")]
    DimensionTooLarge(usize),
    #[error("matrix is not positive semidefinite (eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("invalid support: {0}")]
    InvalidSupport(String),
    #[error("eigenvalues must be nonnegative and in descending order")]
    NotDescending,
    #[error("basis columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("delta = {delta} outside admissible window [{lo}, {hi}]")]
    ParameterWindow { delta: f64, lo: f64, hi: f64 },
    #[error("perturbation blocks need {needed} free coordinates, only {available} available")]
    SupportOverflow { needed: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rank budget {r} exceeds dimension {n}")]
    RankInfeasible { r: usize, n: usize },
    #[error("projection residuals stalled at {0:e}; parameters look inconsistent")]
    Infeasible(f64),
    #[error("sample count {0} cannot be split into equal blocks")]
    SampleCountNotDivisible(usize),
    #[error("support enumeration needs {needed} evaluations, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("analytic sparsity {ratio} exceeds sqrt(n)/4 = {limit}")]
    SparsityTooLarge { ratio: f64, limit: f64 },
    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("eigengap lambda_r - lambda_(r+1) is zero")]
    DegenerateGap,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach `path` to a bare I/O error.
    pub fn at(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::File { path: path.to_path_buf(), source }
    }
}
