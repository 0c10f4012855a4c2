use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("missing value for year {year} in {context}")]
    MissingYear { year: i32, context: String },

    #[error("imputation failed: {0}")]
    Imputation(String),

    #[error("linear predictor {eta} is not positive; log-mean undefined")]
    NonPositivePredictor { eta: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("collinear exposures: {0}")]
    Collinear(String),

    #[error("estimator did not converge after {iterations} iterations (objective {objective})")]
    NotConverged {
        iterations: usize,
        objective: f64,
        best_theta: [f64; 3],
    },

    #[error("bootstrap failed: {failures} of {replicates} replicates did not converge")]
    BootstrapFailures { failures: usize, replicates: usize },

    #[error("year {0} lies outside the exposure domain")]
    OutOfDomain(i32),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
