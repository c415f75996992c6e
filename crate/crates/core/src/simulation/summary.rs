//! Aggregation of replication records and the CSV / Markdown reports.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::ReplicationRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Oracle1,
    Oracle2,
    TwoStep,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Oracle1 => "Oracle 1",
            Estimator::Oracle2 => "Oracle 2",
            Estimator::TwoStep => "Two-step",
        }
    }
}

/// One line of the summary table. Columns that do not apply to an estimator
/// (selection counts for the oracles, threshold error for the first oracle)
/// are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub design: String,
    pub n: usize,
    pub p: usize,
    pub estimator: Estimator,
    pub completed: usize,
    pub failures: usize,
    pub mean_excess_risk: f64,
    pub median_excess_risk: f64,
    pub mean_active: f64,
    pub mean_active_beta: f64,
    pub mean_active_delta: f64,
    pub coverage: f64,
    /// Per-target selection rates joined by `/`.
    pub target_hit_rates: String,
    pub mean_l1: f64,
    pub mean_l1_on_support: f64,
    pub mean_l1_off_support: f64,
    pub mean_tau_abs_err: f64,
}

/// Mean over the finite entries, `NaN` if there are none.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut k) = (0.0, 0usize);
    for v in values.filter(|v| v.is_finite()) {
        s += v;
        k += 1;
    }
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.filter(|v| v.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Summary rows for one `(design, n, p)` cell.
fn summarize_cell(records: &[&ReplicationRecord]) -> Vec<SummaryRow> {
    let first = records[0];
    let ok: Vec<&ReplicationRecord> = records.iter().copied().filter(|r| !r.failed).collect();
    let failures = records.len() - ok.len();
    let row = |estimator, risk: &dyn Fn(&ReplicationRecord) -> f64| SummaryRow {
        design: first.design.clone(),
        n: first.n,
        p: first.p,
        estimator,
        completed: ok.len(),
        failures,
        mean_excess_risk: mean(ok.iter().map(|r| risk(r))),
        median_excess_risk: median(ok.iter().map(|r| risk(r))),
        mean_active: f64::NAN,
        mean_active_beta: f64::NAN,
        mean_active_delta: f64::NAN,
        coverage: f64::NAN,
        target_hit_rates: String::new(),
        mean_l1: f64::NAN,
        mean_l1_on_support: f64::NAN,
        mean_l1_off_support: f64::NAN,
        mean_tau_abs_err: f64::NAN,
    };

    let mut o1 = row(Estimator::Oracle1, &|r| r.oracle1_excess_risk);
    o1.mean_l1 = mean(ok.iter().map(|r| r.oracle1_l1));
    o1.mean_l1_on_support = o1.mean_l1;

    let mut o2 = row(Estimator::Oracle2, &|r| r.oracle2_excess_risk);
    o2.mean_l1 = mean(ok.iter().map(|r| r.oracle2_l1));
    o2.mean_l1_on_support = o2.mean_l1;
    o2.mean_tau_abs_err = mean(ok.iter().map(|r| r.oracle2_tau_abs_err));

    let mut est = row(Estimator::TwoStep, &|r| r.excess_risk);
    est.mean_active = mean(ok.iter().map(|r| r.n_active as f64));
    est.mean_active_beta = mean(ok.iter().map(|r| r.n_active_beta as f64));
    est.mean_active_delta = mean(ok.iter().map(|r| r.n_active_delta as f64));
    est.coverage = mean(ok.iter().map(|r| f64::from(u8::from(r.covers_truth))));
    let targets = ok.first().map_or(0, |r| r.target_hits.len());
    est.target_hit_rates = (0..targets)
        .map(|t| {
            let rate = mean(ok.iter().map(|r| f64::from(u8::from(r.target_hit_flags().get(t) == Some(&true)))));
            format!("{rate}")
        })
        .collect::<Vec<_>>()
        .join("/");
    est.mean_l1 = mean(ok.iter().map(|r| r.l1_total));
    est.mean_l1_on_support = mean(ok.iter().map(|r| r.l1_on_support));
    est.mean_l1_off_support = mean(ok.iter().map(|r| r.l1_off_support));
    est.mean_tau_abs_err = mean(ok.iter().map(|r| r.tau_hat_abs_err));
    vec![o1, o2, est]
}

/// Groups records by `(design, n, p)` in order of first appearance and
/// summarizes each group.
pub fn summarize(records: &[ReplicationRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::Data("no replication records to summarize".into()));
    }
    let mut keys: Vec<(String, usize, usize)> = Vec::new();
    for r in records {
        let k = (r.design.clone(), r.n, r.p);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    Ok(keys
        .iter()
        .flat_map(|(d, n, p)| {
            let cell: Vec<&ReplicationRecord> =
                records.iter().filter(|r| &r.design == d && r.n == *n && r.p == *p).collect();
            summarize_cell(&cell)
        })
        .collect())
}

fn fmt(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        "NA".to_string()
    }
}

fn fmt_rates(rates: &str) -> String {
    rates
        .split('/')
        .map(|r| r.parse::<f64>().map_or_else(|_| "NA".to_string(), |v| fmt(v, 2)))
        .collect::<Vec<_>>()
        .join(" / ")
}

/// Markdown table in the layout of the published simulation tables.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str("| Design | n | p | Estimator | Risk mean | Risk median | E[J] (beta / delta) | P{cover} (targets) | E|a-a0|_1 (on / off) | E|tau-tau0| | Failed |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let (counts, cover, l1) = match r.estimator {
            Estimator::TwoStep => (
                format!(
                    "{} ({} / {})",
                    fmt(r.mean_active, 2),
                    fmt(r.mean_active_beta, 1),
                    fmt(r.mean_active_delta, 1)
                ),
                format!("{} ({})", fmt(r.coverage, 2), fmt_rates(&r.target_hit_rates)),
                format!(
                    "{} ({} / {})",
                    fmt(r.mean_l1, 3),
                    fmt(r.mean_l1_on_support, 3),
                    fmt(r.mean_l1_off_support, 3)
                ),
            ),
            _ => (
                "NA".to_string(),
                "NA".to_string(),
                format!("{} ({} / NA)", fmt(r.mean_l1, 3), fmt(r.mean_l1_on_support, 3)),
            ),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.design,
            r.n,
            r.p,
            r.estimator.label(),
            fmt(r.mean_excess_risk, 3),
            fmt(r.median_excess_risk, 3),
            counts,
            cover,
            l1,
            fmt(r.mean_tau_abs_err, 3),
            r.failures
        ));
    }
    out
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_path<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

/// Column names of `replications.csv`.
pub fn replication_headers() -> Vec<&'static str> {
    vec![
        "design",
        "n",
        "p",
        "seed",
        "replication",
        "failed",
        "excess_risk",
        "n_active",
        "n_active_beta",
        "n_active_delta",
        "covers_truth",
        "target_hits",
        "l1_total",
        "l1_on_support",
        "l1_off_support",
        "tau_hat_abs_err",
        "tau_tilde_abs_err",
        "oracle1_excess_risk",
        "oracle1_l1",
        "oracle2_excess_risk",
        "oracle2_l1",
        "oracle2_tau_abs_err",
    ]
}

/// Reads replication records, rejecting files whose header differs from
/// [`replication_headers`] and files without rows.
pub fn read_replications<R: Read>(reader: R, source: &str) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = replication_headers();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Data(format!(
            "{source}: schema mismatch; expected columns {}",
            expected.join(",")
        )));
    }
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<ReplicationRecord>, _>>()
        .map_err(|e| Error::Data(format!("{source}: {e}")))?;
    if records.is_empty() {
        return Err(Error::Data(format!("{source}: no replication rows")));
    }
    Ok(records)
}

pub fn read_replications_path(path: impl AsRef<Path>) -> Result<Vec<ReplicationRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_replications(file, &path.display().to_string())
}
