use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("{name} = {value} is outside its domain: {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("design matrix is rank deficient (rank {rank} < {d})")]
    RankDeficient { rank: usize, d: usize },
    #[error("simplex did not converge within {iterations} pivots (best objective {objective})")]
    NoConvergence {
        iterations: usize,
        objective: f64,
        beta: Vec<f64>,
    },
    #[error("quantile regression failed at tau = {tau}: {source}")]
    AtTau {
        tau: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("bandwidth {h} too large for tau range [{tau_min}, {tau_max}]")]
    BandwidthTooLarge { h: f64, tau_min: f64, tau_max: f64 },
    #[error("tau grid [{tau_min}, {tau_max}] does not cover [{epsilon}, {}]", 1.0 - epsilon)]
    GridCoverage {
        tau_min: f64,
        tau_max: f64,
        epsilon: f64,
    },
    #[error("difference stencil around tau = {tau} leaves the grid range; use the kernel estimator instead")]
    StencilRange { tau: f64 },
    #[error("matrix is numerically singular (smallest singular value {smallest_singular_value:e})")]
    Singular { smallest_singular_value: f64 },
    #[error("curvature estimate v = {0} is not positive; use subsampling instead")]
    NonPositiveCurvature(f64),
    #[error("no observations in the regressor neighbourhood; increase b_X")]
    EmptyNeighbourhood,
    #[error("{failed} of {total} resampled estimates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("non-finite weights in EM iteration {0}")]
    NonFiniteWeights(usize),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("cache error: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// The input parameter the error is attributable to, when there is one.
    pub fn parameter(&self) -> Option<&'static str> {
        match self {
            Self::Domain { name, .. } => Some(name),
            Self::MissingColumn(_) => Some("response"),
            Self::BandwidthTooLarge { .. } => Some("bandwidth"),
            Self::GridCoverage { .. } => Some("epsilon"),
            Self::StencilRange { .. } | Self::NonPositiveCurvature(_) => Some("v_method"),
            Self::EmptyNeighbourhood => Some("b_X"),
            Self::Singular { .. } => Some("h_J"),
            Self::InfeasibleSplit(_) => Some("split"),
            Self::AtTau { source, .. } => source.parameter(),
            _ => None,
        }
    }
}

pub(crate) fn check_prob(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            expected: "must lie in (0, 1)",
        })
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            expected: "must be positive and finite",
        })
    }
}
