//! Monte Carlo designs, excess-risk evaluation and experiment aggregation.

pub mod dgp;
pub mod experiment;
pub mod metrics;
pub mod risk;
pub mod summary;
