//! Per-replication accuracy metrics.

use serde::{Deserialize, Serialize};

use super::dgp::TrueModel;
use super::risk::ValidationSample;
use crate::error::{invalid, Result};
use crate::model::{active_set, ActiveSet, CoefficientPair};
use crate::pipeline::{OracleFit, TwoStepFit};

/// One row of `replications.csv`.
///
/// Threshold errors are `NaN` when the truth has no threshold effect, and
/// every metric is `NaN` for a failed replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub design: String,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub replication: u64,
    pub failed: bool,
    pub excess_risk: f64,
    pub n_active: usize,
    pub n_active_beta: usize,
    pub n_active_delta: usize,
    pub covers_truth: bool,
    /// One `0`/`1` per coordinate of the true support, in `(beta, delta)`
    /// order.
    pub target_hits: String,
    pub l1_total: f64,
    pub l1_on_support: f64,
    pub l1_off_support: f64,
    pub tau_hat_abs_err: f64,
    pub tau_tilde_abs_err: f64,
    pub oracle1_excess_risk: f64,
    pub oracle1_l1: f64,
    pub oracle2_excess_risk: f64,
    pub oracle2_l1: f64,
    pub oracle2_tau_abs_err: f64,
}

impl ReplicationRecord {
    /// A placeholder row for a replication that errored.
    pub fn failed(design: &str, n: usize, p: usize, seed: u64, replication: u64) -> Self {
        Self {
            design: design.to_string(),
            n,
            p,
            seed,
            replication,
            failed: true,
            excess_risk: f64::NAN,
            n_active: 0,
            n_active_beta: 0,
            n_active_delta: 0,
            covers_truth: false,
            target_hits: String::new(),
            l1_total: f64::NAN,
            l1_on_support: f64::NAN,
            l1_off_support: f64::NAN,
            tau_hat_abs_err: f64::NAN,
            tau_tilde_abs_err: f64::NAN,
            oracle1_excess_risk: f64::NAN,
            oracle1_l1: f64::NAN,
            oracle2_excess_risk: f64::NAN,
            oracle2_l1: f64::NAN,
            oracle2_tau_abs_err: f64::NAN,
        }
    }

    pub fn target_hit_flags(&self) -> Vec<bool> {
        self.target_hits.chars().map(|c| c == '1').collect()
    }
}

/// l1 error split into the true support and its complement (`2p` layout).
pub fn l1_split(est: &CoefficientPair, truth: &CoefficientPair, support: &ActiveSet) -> (f64, f64, f64) {
    let (mut on, mut off) = (0.0, 0.0);
    for (j, (a, b)) in est.as_alpha().iter().zip(truth.as_alpha()).enumerate() {
        let e = (a - b).abs();
        if support.contains(j) {
            on += e;
        } else {
            off += e;
        }
    }
    (on + off, on, off)
}

/// Identifies a replication inside an experiment.
#[derive(Debug, Clone, Copy)]
pub struct ReplicationId<'a> {
    pub design: &'a str,
    pub n: usize,
    pub seed: u64,
    pub replication: u64,
}

/// Scores a full fit and both oracles against the truth on a shared
/// validation sample.
pub fn replication_metrics(
    id: ReplicationId<'_>,
    truth: &TrueModel,
    fit: &TwoStepFit,
    oracle1: &OracleFit,
    oracle2: &OracleFit,
    sample: &ValidationSample,
    active_tol: f64,
) -> Result<ReplicationRecord> {
    if fit.direction != truth.direction {
        return Err(invalid(format!(
            "fit uses direction {:?} but the truth uses {:?}; convert one of them first",
            fit.direction, truth.direction
        )));
    }
    if fit.alpha_tilde.p() != truth.p() {
        return Err(invalid("fit and truth have different dimensions"));
    }
    let alpha0 = truth.alpha0();
    let support = truth.active();
    let est = active_set(&fit.alpha_tilde.as_alpha(), active_tol)?;
    let p = truth.p();
    let (n_beta, n_delta) = est.split_counts(p);
    let (l1_total, l1_on, l1_off) = l1_split(&fit.alpha_tilde, &alpha0, &support);
    let has_change = truth.delta0.iter().any(|&d| d != 0.0);
    let tau_err = |t: f64| if has_change { (t - truth.tau0).abs() } else { f64::NAN };
    let dir = truth.direction;

    Ok(ReplicationRecord {
        design: id.design.to_string(),
        n: id.n,
        p,
        seed: id.seed,
        replication: id.replication,
        failed: false,
        excess_risk: sample.excess_risk(truth, &fit.alpha_tilde, fit.tau_tilde, dir)?,
        n_active: est.len(),
        n_active_beta: n_beta,
        n_active_delta: n_delta,
        covers_truth: support.is_subset_of(&est),
        target_hits: support
            .indices()
            .iter()
            .map(|&j| if est.contains(j) { '1' } else { '0' })
            .collect(),
        l1_total,
        l1_on_support: l1_on,
        l1_off_support: l1_off,
        tau_hat_abs_err: tau_err(fit.lasso.tau_hat),
        tau_tilde_abs_err: tau_err(fit.tau_tilde),
        oracle1_excess_risk: sample.excess_risk(truth, &oracle1.alpha, oracle1.tau, dir)?,
        oracle1_l1: oracle1.alpha.l1_distance(&alpha0),
        oracle2_excess_risk: sample.excess_risk(truth, &oracle2.alpha, oracle2.tau, dir)?,
        oracle2_l1: oracle2.alpha.l1_distance(&alpha0),
        oracle2_tau_abs_err: tau_err(oracle2.tau),
    })
}
