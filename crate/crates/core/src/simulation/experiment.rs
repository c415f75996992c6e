//! Monte Carlo experiments: replications, seeding and aggregation.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{gen_from_truth, Design, TrueModel};
use super::metrics::{replication_metrics, ReplicationId, ReplicationRecord};
use super::risk::{RiskMethod, ValidationSample};
use crate::error::{invalid, Error, Result};
use crate::model::ActiveSet;
use crate::pipeline::{fit_full, fit_oracle, FitConfig};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub tau0: f64,
    /// Drops the threshold effect from the design.
    pub no_change: bool,
    pub fit: FitConfig,
    pub risk: RiskMethod,
}

impl ExperimentConfig {
    /// The tuning used for the published tables of `design`.
    pub fn table(design: Design, p: usize, replications: usize, master_seed: u64) -> Self {
        let fit = match design {
            Design::Median61 => FitConfig::median_default(p),
            Design::Logit62 => FitConfig::logistic_default(p),
        };
        Self {
            design,
            n: 400,
            p,
            replications,
            master_seed,
            tau0: 0.5,
            no_change: false,
            fit,
            risk: RiskMethod::default(),
        }
    }

    pub fn truth(&self) -> Result<TrueModel> {
        let t = TrueModel::for_design(self.design, self.p, self.tau0)?;
        Ok(if self.no_change { t.without_change() } else { t })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("replications must be >= 1"));
        }
        if self.n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        if !(self.tau0 > 0.0 && self.tau0 < 1.0) {
            return Err(invalid(format!("tau0 must lie in (0, 1), got {}", self.tau0)));
        }
        if self.fit.spec != self.design.loss() {
            return Err(invalid(format!(
                "design {} needs the {:?} loss",
                self.design.name(),
                self.design.loss().kind
            )));
        }
        if self.fit.direction != crate::model::IndicatorDirection::Less {
            return Err(invalid("the simulation designs use direction=less"));
        }
        self.fit.validate()?;
        self.risk.validate()?;
        self.truth().map(|_| ())
    }

    /// Label used in output files, e.g. `median61` or `median61-nochange`.
    pub fn label(&self) -> String {
        if self.no_change {
            format!("{}-nochange", self.design.name())
        } else {
            self.design.name().to_string()
        }
    }
}

/// Random stream of replication `r`: ChaCha8 keyed by the master seed, with
/// the replication index as the stream id. Each replication is reproducible
/// on its own and independent of scheduling.
pub fn replication_rng(master_seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub replication: u64,
    pub runtime_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<ReplicationRecord>,
    pub timings: Vec<Timing>,
    pub summary: Vec<super::summary::SummaryRow>,
}

/// Runs one replication: data, full fit, both oracles, metrics.
pub fn run_replication(config: &ExperimentConfig, truth: &TrueModel, replication: u64) -> Result<ReplicationRecord> {
    let mut rng = replication_rng(config.master_seed, replication);
    let data = gen_from_truth(truth, config.n, &mut rng)?;
    let fit = fit_full(&data, &config.fit)?;
    let support: ActiveSet = truth.active();
    let grid = &fit.lasso.grid;
    let o1 = fit_oracle(&data, &support, Some(truth.tau0), &config.fit.spec, truth.direction, grid, &config.fit.solver)?;
    let o2 = fit_oracle(&data, &support, None, &config.fit.spec, truth.direction, grid, &config.fit.solver)?;
    let sample = ValidationSample::draw(truth, config.risk, &mut rng)?;
    let label = config.label();
    let id = ReplicationId {
        design: &label,
        n: config.n,
        seed: config.master_seed,
        replication,
    };
    replication_metrics(id, truth, &fit, &o1, &o2, &sample, config.fit.active_tol)
}

/// Runs every replication on a pool of `threads` workers (0 = rayon's
/// default) and aggregates the results.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    config.validate()?;
    let truth = config.truth()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    let label = config.label();
    let results: Vec<(ReplicationRecord, Timing)> = pool.install(|| {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|r| {
                let start = Instant::now();
                let record = match run_replication(config, &truth, r) {
                    Ok(rec) => rec,
                    Err(e) => {
                        log::warn!("replication {r} failed: {e}");
                        ReplicationRecord::failed(&label, config.n, config.p, config.master_seed, r)
                    }
                };
                let timing = Timing {
                    replication: r,
                    runtime_ms: start.elapsed().as_millis() as u64,
                };
                (record, timing)
            })
            .collect()
    });
    let (records, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let failed = records.iter().filter(|r| r.failed).count();
    if failed as f64 > MAX_FAILURE_RATE * records.len() as f64 {
        return Err(Error::ExperimentFailed {
            failed,
            total: records.len(),
        });
    }
    let summary = super::summary::summarize(&records)?;
    Ok(ExperimentOutput {
        records,
        timings,
        summary,
    })
}
