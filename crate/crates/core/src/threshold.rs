//! Threshold grids, the warm-started profile sweep over the grid, and the
//! threshold refit for fixed coefficients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss::LossSpec;
use crate::model::{CoefficientPair, Dataset, IndicatorDirection, ThresholdDesign};
use crate::penalty::penalty_weights;
use crate::solver::{solve_penalized_warm, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum GridMode {
    /// Distinct observed `q` values inside the range.
    Observed,
    /// Empirical `j/N` quantiles of `q`, clamped to the range.
    QuantileApprox(usize),
    /// `N` equally spaced points including both ends of the range.
    Equispaced(usize),
}

/// A grid description, resolved against data by [`build_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub low: f64,
    pub high: f64,
    pub mode: GridMode,
}

impl GridSpec {
    pub fn new(low: f64, high: f64, mode: GridMode) -> Result<Self> {
        let spec = Self { low, high, mode };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(invalid(format!(
                "threshold range must satisfy low < high, got [{}, {}]",
                self.low, self.high
            )));
        }
        match self.mode {
            GridMode::QuantileApprox(n) | GridMode::Equispaced(n) if n < 2 => {
                Err(invalid(format!("approximate grids need at least 2 points, got {n}")))
            }
            _ => Ok(()),
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            low: 0.15,
            high: 0.85,
            mode: GridMode::Equispaced(71),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    taus: Vec<f64>,
    mode: GridMode,
    range: (f64, f64),
}

impl TauGrid {
    /// Builds a grid from explicit values; they must be strictly increasing
    /// and inside `range`.
    pub fn from_values(taus: Vec<f64>, range: (f64, f64)) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::EmptyGrid("no threshold values supplied".into()));
        }
        if taus.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("grid values must be strictly increasing"));
        }
        if taus.iter().any(|t| *t < range.0 || *t > range.1) {
            return Err(invalid("grid values must lie inside the range"));
        }
        Ok(Self {
            taus,
            mode: GridMode::Observed,
            range,
        })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn contains(&self, tau: f64) -> bool {
        self.taus.contains(&tau)
    }
}

pub fn build_grid(data: &Dataset, spec: &GridSpec) -> Result<TauGrid> {
    spec.validate()?;
    let (low, high) = (spec.low, spec.high);
    let mut taus: Vec<f64> = match spec.mode {
        GridMode::Observed => data.q().iter().copied().filter(|q| *q >= low && *q <= high).collect(),
        GridMode::QuantileApprox(count) => {
            let mut sorted = data.q().to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            (0..=count)
                .map(|j| {
                    // inverse empirical CDF at j/count
                    let rank = ((j as f64 / count as f64) * n as f64).ceil() as usize;
                    sorted[rank.clamp(1, n) - 1].clamp(low, high)
                })
                .collect()
        }
        GridMode::Equispaced(count) => {
            let step = (high - low) / (count - 1) as f64;
            (0..count)
                .map(|k| if k + 1 == count { high } else { low + k as f64 * step })
                .collect()
        }
    };
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    if taus.is_empty() {
        return Err(Error::EmptyGrid(format!("no threshold candidates in [{low}, {high}]")));
    }
    Ok(TauGrid {
        taus,
        mode: spec.mode,
        range: (low, high),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub tau: f64,
    pub alpha_hat: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub kkt_violation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub records: Vec<ProfileRecord>,
    pub argmin_index: usize,
    pub excluded: usize,
}

/// Everything the sweep needs besides the data and grid.
#[derive(Debug, Clone, Copy)]
pub struct ProfileSettings<'a> {
    pub spec: LossSpec,
    pub lambda: f64,
    pub direction: IndicatorDirection,
    pub lla_weights: Option<&'a [f64]>,
    /// Extra coordinates pinned at zero on top of the degenerate ones.
    pub lock: Option<&'a [bool]>,
    pub solver: SolverOptions,
    /// Number of contiguous grid chunks; each chunk is swept with its own warm
    /// starts and chunks may run in parallel.
    pub chunks: usize,
}

impl<'a> ProfileSettings<'a> {
    pub fn new(spec: LossSpec, lambda: f64, direction: IndicatorDirection, solver: SolverOptions) -> Self {
        Self {
            spec,
            lambda,
            direction,
            lla_weights: None,
            lock: None,
            solver,
            chunks: 1,
        }
    }
}

fn sweep_chunk(data: &Dataset, taus: &[f64], settings: &ProfileSettings<'_>) -> Result<Vec<ProfileRecord>> {
    let mut warm: Option<Vec<f64>> = None;
    let mut warm_dual: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let design = ThresholdDesign::new(data, tau, settings.direction)?;
        let mut weights = penalty_weights(&design);
        if let Some(lock) = settings.lock {
            weights.lock(lock);
        }
        let res = solve_penalized_warm(
            &design,
            &settings.spec,
            settings.lambda,
            &weights,
            settings.lla_weights,
            warm.as_deref(),
            warm_dual.as_deref(),
            &settings.solver,
        )?;
        warm = Some(res.alpha.clone());
        warm_dual = (!res.dual.is_empty()).then(|| res.dual.clone());
        out.push(ProfileRecord {
            tau,
            alpha_hat: res.alpha,
            objective: res.objective,
            converged: res.converged,
            kkt_violation: res.kkt_violation,
            iterations: res.iterations,
        });
    }
    Ok(out)
}

/// Solves the penalized problem at every grid point, ascending in `tau`.
pub fn profile(data: &Dataset, grid: &TauGrid, settings: &ProfileSettings<'_>) -> Result<ProfileResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid("profile over an empty grid".into()));
    }
    let chunks = settings.chunks.clamp(1, grid.len());
    let size = grid.len().div_ceil(chunks);
    let parts: Vec<Vec<ProfileRecord>> = grid
        .taus()
        .par_chunks(size)
        .map(|taus| sweep_chunk(data, taus, settings))
        .collect::<Result<_>>()?;
    let records: Vec<ProfileRecord> = parts.into_iter().flatten().collect();
    let excluded = records.iter().filter(|r| !r.converged).count();
    if excluded > 0 {
        log::warn!("{excluded} of {} grid points did not converge and are excluded", records.len());
    }
    let argmin_index = argmin_index(&records)?;
    Ok(ProfileResult {
        records,
        argmin_index,
        excluded,
    })
}

/// Step 1 of the estimator: the l1-penalized profile over `grid`.
#[allow(clippy::too_many_arguments)]
pub fn profile_objective(
    data: &Dataset,
    grid: &TauGrid,
    direction: IndicatorDirection,
    spec: &LossSpec,
    lambda: f64,
    lla_weights: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<ProfileResult> {
    let settings = ProfileSettings {
        lla_weights,
        ..ProfileSettings::new(*spec, lambda, direction, *opts)
    };
    profile(data, grid, &settings)
}

fn argmin_index(records: &[ProfileRecord]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (k, r) in records.iter().enumerate() {
        if !r.converged {
            continue;
        }
        // strict comparison keeps the smallest tau on ties
        if best.is_none_or(|b| r.objective < records[b].objective) {
            best = Some(k);
        }
    }
    best.ok_or(Error::NoConvergedGridPoint(records.len()))
}

impl ProfileResult {
    /// Builds a result from records, selecting the argmin.
    pub fn from_records(records: Vec<ProfileRecord>) -> Result<Self> {
        let argmin_index = argmin_index(&records)?;
        let excluded = records.iter().filter(|r| !r.converged).count();
        Ok(Self {
            records,
            argmin_index,
            excluded,
        })
    }

    pub fn best(&self) -> &ProfileRecord {
        &self.records[self.argmin_index]
    }
}

/// Step 2: the minimizing threshold and its coefficients.
pub fn argmin_tau(profile: &ProfileResult) -> Result<(f64, CoefficientPair)> {
    let k = argmin_index(&profile.records)?;
    let r = &profile.records[k];
    Ok((r.tau, CoefficientPair::from_alpha(&r.alpha_hat)?))
}

/// Unpenalized empirical risk of fixed coefficients at every grid point.
///
/// Observations are sorted by `q` once; moving along the grid only toggles
/// the regime of observations between adjacent thresholds, so the risk is a
/// base term plus a prefix (or suffix) sum of per-observation differences.
pub fn risk_over_grid(
    data: &Dataset,
    alpha: &CoefficientPair,
    spec: &LossSpec,
    direction: IndicatorDirection,
    grid: &TauGrid,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid("threshold refit over an empty grid".into()));
    }
    if alpha.p() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have p = {}, data has p = {}",
            alpha.p(),
            data.p()
        )));
    }
    spec.validate()?;
    for &y in data.y() {
        spec.check_response(y)?;
    }
    let n = data.n();
    let mut base = vec![0.0; n];
    let mut shift = vec![0.0; n];
    for j in 0..data.p() {
        let col = data.column(j);
        if alpha.beta[j] != 0.0 {
            for (b, &x) in base.iter_mut().zip(col) {
                *b += alpha.beta[j] * x;
            }
        }
        if alpha.delta[j] != 0.0 {
            for (s, &x) in shift.iter_mut().zip(col) {
                *s += alpha.delta[j] * x;
            }
        }
    }
    let y = data.y();
    let base_risk: f64 = (0..n).map(|i| spec.value(y[i], base[i])).sum();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.q()[a].total_cmp(&data.q()[b]).then(a.cmp(&b)));
    let diff: Vec<f64> = order
        .iter()
        .map(|&i| {
            if shift[i] == 0.0 {
                0.0
            } else {
                spec.value(y[i], base[i] + shift[i]) - spec.value(y[i], base[i])
            }
        })
        .collect();
    let sorted_q: Vec<f64> = order.iter().map(|&i| data.q()[i]).collect();
    // prefix[k] = sum of the k smallest-q differences
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + diff[k];
    }

    let nf = n as f64;
    let risks = grid
        .taus()
        .iter()
        .map(|&tau| {
            let regime_sum = match direction {
                IndicatorDirection::Less => {
                    let k = sorted_q.partition_point(|&q| q < tau);
                    prefix[k]
                }
                IndicatorDirection::Greater => {
                    let k = sorted_q.partition_point(|&q| q <= tau);
                    prefix[n] - prefix[k]
                }
            };
            (base_risk + regime_sum) / nf
        })
        .collect();
    Ok(risks)
}

/// Step 4: re-estimates the threshold for fixed coefficients, returning the
/// smallest minimizing grid value.
pub fn refit_tau(
    data: &Dataset,
    alpha: &CoefficientPair,
    spec: &LossSpec,
    direction: IndicatorDirection,
    grid: &TauGrid,
) -> Result<f64> {
    let risks = risk_over_grid(data, alpha, spec, direction, grid)?;
    let mut best = 0;
    for (k, &r) in risks.iter().enumerate() {
        if r < risks[best] {
            best = k;
        }
    }
    Ok(grid.taus()[best])
}
