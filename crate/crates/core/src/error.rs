use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied an invalid argument or violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input data is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    #[error("stratum {stratum}: requested {requested} points but only {available} available")]
    StratumTooSmall {
        stratum: u32,
        requested: usize,
        available: usize,
    },

    #[error("duplicate coordinates at points {first} and {second}")]
    DuplicateCoordinates { first: u64, second: u64 },

    #[error("rho = {rho} outside the admissible interval ({lower}, {upper})")]
    RhoNotAdmissible { rho: f64, lower: f64, upper: f64 },

    #[error("matrix I - rho W is numerically singular (pivot {pivot:e} at row {row})")]
    Singular { row: usize, pivot: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("likelihood maximum at interval boundary: rho = {rho}")]
    Boundary { rho: f64 },

    #[error("information matrix is not positive definite (eigenvalues {eigenvalues:?}, condition {condition:e})")]
    NotPositiveDefinite {
        eigenvalues: Vec<f64>,
        condition: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad data
    /// or bad arguments).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RhoNotAdmissible { .. }
                | Error::Singular { .. }
                | Error::RankDeficient
                | Error::Boundary { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Numerical(_)
        )
    }
}
