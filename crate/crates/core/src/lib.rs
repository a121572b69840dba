//! Conditional mode (modal) regression by inverting a linear quantile
//! regression model.
//!
//! The pipeline: fit the quantile process `tau -> beta(tau)` on a grid
//! ([`qr`]), difference it in `tau` to estimate the sparsity function and
//! take its minimiser ([`mode`]), pick the differencing bandwidth
//! ([`bandwidth`]), and build confidence intervals from the Chernoff limit or
//! by subsampling ([`inference`], [`chernoff`]). [`simlab`] holds the
//! simulation designs and experiment harnesses.

pub mod bandwidth;
pub mod chernoff;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod mode;
pub mod qr;
pub mod seeding;
pub mod simlab;

pub use dataset::{load_csv, read_csv, Dataset, DesignPoint, Diagnostic};
pub use error::{Error, Result};
pub use mode::{estimate_mode, ModeConfig, ModeEstimate, SparsityCurve};
pub use qr::{predict_quantile, solve_path, solve_qr, QrFit, QuantileProcess};
