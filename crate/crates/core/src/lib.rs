//! Two-step penalized M-estimation for high-dimensional sparse regression
//! whose sparsity pattern changes at an unknown threshold of an observed
//! variable `q`.
//!
//! The estimator profiles an l1-penalized fit over a grid of thresholds,
//! refits the coefficients at the selected threshold with SCAD-reweighted
//! penalties, then re-estimates the threshold with the refitted coefficients.
//! Both the quantile check loss and the logistic loss are supported.

pub mod config;
pub mod error;
pub mod loss;
pub mod model;
pub mod penalty;
pub mod pipeline;
pub mod simulation;
pub mod solver;
pub mod threshold;

pub use error::{Error, Result};
pub use loss::{LossKind, LossSpec};
pub use model::{ActiveSet, CoefficientPair, Dataset, IndicatorDirection, ThresholdDesign};
pub use penalty::{PenaltyWeights, ScadConfig};
pub use pipeline::{FitConfig, LassoFit, TwoStepFit};
pub use solver::{QuantileMethod, SolveResult, SolverOptions};
pub use threshold::{GridMode, GridSpec, ProfileResult, TauGrid};
