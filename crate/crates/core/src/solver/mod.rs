//! Fixed-threshold weighted-l1 penalized M-estimation
//!
//! ```text
//! min_alpha (1/n) sum_i rho(y_i, X_i(tau)' alpha) + lambda * sum_j w_j D_j(tau) |alpha_j|
//! ```
//!
//! The check loss is a linear program and is solved by an active-set simplex,
//! with ADMM on the splitting `z = X(tau) alpha` as the fallback (or on
//! request). The logistic loss uses monotone accelerated proximal gradient.
//! The iterative solvers finish with an exact polish on the detected support
//! and every result carries a KKT certificate.

mod admm;
mod fista;
mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss::{mean_loss, LossKind, LossSpec};
use crate::model::ThresholdDesign;
use crate::penalty::PenaltyWeights;

/// Algorithm for the check loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileMethod {
    /// Active-set simplex, falling back to ADMM if it stalls.
    #[default]
    Simplex,
    Admm,
}

impl std::str::FromStr for QuantileMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simplex" => Ok(Self::Simplex),
            "admm" => Ok(Self::Admm),
            other => Err(invalid(format!("unknown quantile solver `{other}` (expected simplex or admm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub quantile_method: QuantileMethod,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub admm_rho: f64,
    pub adaptive_rho: bool,
    /// Relative objective change that stops the proximal-gradient loop.
    pub fista_tol: f64,
    /// Parameter-space bound `|alpha|_inf <= box_bound`, applied as a final
    /// projection.
    pub box_bound: f64,
    /// Coordinate-descent sweeps per ADMM coefficient update.
    pub inner_sweeps: usize,
    /// KKT violation below which a polished point is accepted as optimal.
    pub kkt_tol: f64,
    /// Iterations between support-polish attempts.
    pub polish_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quantile_method: QuantileMethod::Simplex,
            max_iter: 20_000,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            admm_rho: 1.0,
            adaptive_rho: true,
            fista_tol: 1e-9,
            box_bound: 1e6,
            inner_sweeps: 5,
            kkt_tol: 1e-8,
            polish_every: 10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("solver.tol_primal", self.tol_primal),
            ("solver.tol_dual", self.tol_dual),
            ("solver.admm_rho", self.admm_rho),
            ("solver.fista_tol", self.fista_tol),
            ("solver.box_bound", self.box_bound),
            ("solver.kkt_tol", self.kkt_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a positive finite number, got {v}")));
            }
        }
        if self.max_iter == 0 || self.inner_sweeps == 0 || self.polish_every == 0 {
            return Err(invalid("solver iteration counts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    /// True when the returned point passed the exact support certificate.
    pub certified: bool,
    /// Accepted objective values, one per proximal-gradient iteration (empty
    /// for ADMM).
    pub objective_trace: Vec<f64>,
    /// Per-observation loss subgradient at the solution (check loss only;
    /// empty otherwise). Can be passed back as a warm start.
    pub dual: Vec<f64>,
}

/// Residuals this close to zero (relative to `max(1, |y_i|)`) are treated as
/// sitting on the kink of the check loss.
pub const ZERO_RESIDUAL_TOL: f64 = 1e-9;

/// `sign(v) * max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Per-coordinate penalty levels and locks for one solve.
pub(crate) struct Problem<'d, 'a> {
    pub design: &'d ThresholdDesign<'a>,
    pub spec: LossSpec,
    pub pen: Vec<f64>,
    pub locked: Vec<bool>,
}

impl<'d, 'a> Problem<'d, 'a> {
    pub fn new(
        design: &'d ThresholdDesign<'a>,
        spec: &LossSpec,
        lambda: f64,
        weights: &PenaltyWeights,
        lla_weights: Option<&[f64]>,
    ) -> Result<Self> {
        spec.validate()?;
        let w = design.width();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if weights.len() != w {
            return Err(Error::DimensionMismatch(format!(
                "penalty weights have {} entries, design has {w} columns",
                weights.len()
            )));
        }
        if let Some(l) = lla_weights {
            if l.len() != w {
                return Err(Error::DimensionMismatch(format!(
                    "{} adaptive weights for {w} columns",
                    l.len()
                )));
            }
            if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(invalid("adaptive weights must be finite and >= 0"));
            }
        }
        for &y in design.data().y() {
            spec.check_response(y)?;
        }
        let pen = (0..w)
            .map(|j| lambda * lla_weights.map_or(1.0, |l| l[j]) * weights.scale(j))
            .collect();
        Ok(Self {
            design,
            spec: *spec,
            pen,
            locked: weights.zero_locked().to_vec(),
        })
    }

    pub fn width(&self) -> usize {
        self.pen.len()
    }

    pub fn y(&self) -> &'a [f64] {
        self.design.data().y()
    }

    pub fn penalty(&self, alpha: &[f64]) -> f64 {
        alpha.iter().zip(&self.pen).map(|(a, p)| a.abs() * p).sum()
    }

    pub fn objective_with_pred(&self, alpha: &[f64], pred: &[f64]) -> f64 {
        mean_loss(&self.spec, self.y(), pred) + self.penalty(alpha)
    }

    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let pred = self.design.predict(alpha);
        self.objective_with_pred(alpha, &pred)
    }

    /// Per-coordinate KKT violation, with interval subgradients for check-loss
    /// residuals within `zero_tol` of zero.
    pub fn kkt_violation(&self, alpha: &[f64], zero_tol: f64) -> f64 {
        let design = self.design;
        let n = design.n() as f64;
        let y = self.y();
        let pred = design.predict(alpha);
        let (h_lo, h_hi): (Vec<f64>, Vec<f64>) = match self.spec.kind {
            LossKind::Quantile => {
                let g = self.spec.gamma;
                y.iter()
                    .zip(&pred)
                    .map(|(&yi, &ti)| {
                        let r = yi - ti;
                        if r.abs() <= zero_tol * yi.abs().max(1.0) {
                            (-g, 1.0 - g)
                        } else if r > 0.0 {
                            (-g, -g)
                        } else {
                            (1.0 - g, 1.0 - g)
                        }
                    })
                    .unzip()
            }
            LossKind::Logistic => y
                .iter()
                .zip(&pred)
                .map(|(&yi, &ti)| {
                    let d = self.spec.derivative(yi, ti);
                    (d, d)
                })
                .unzip(),
        };
        let p = design.p();
        let regime = design.regime_indices();
        let mut worst: f64 = 0.0;
        for j in 0..self.width() {
            if self.locked[j] {
                continue;
            }
            let col = design.data().column(j % p);
            let mut lo = 0.0;
            let mut hi = 0.0;
            let mut acc = |i: usize| {
                let x = col[i];
                if x >= 0.0 {
                    lo += x * h_lo[i];
                    hi += x * h_hi[i];
                } else {
                    lo += x * h_hi[i];
                    hi += x * h_lo[i];
                }
            };
            if j < p {
                (0..design.n()).for_each(&mut acc);
            } else {
                regime.iter().for_each(|&i| acc(i));
            }
            let (lo, hi) = (lo / n, hi / n);
            let pen = self.pen[j];
            let a = alpha[j];
            let v = if a != 0.0 {
                let s = pen * a.signum();
                interval_distance(lo + s, hi + s)
            } else {
                (lo - pen).max(-hi - pen).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Clamps to the parameter box, returning whether anything moved.
    pub fn project_box(alpha: &mut [f64], bound: f64) -> bool {
        let mut moved = false;
        for a in alpha.iter_mut() {
            if a.abs() > bound {
                *a = a.signum() * bound;
                moved = true;
            }
        }
        moved
    }
}

/// Distance from 0 to `[lo, hi]`.
#[inline]
fn interval_distance(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        -hi
    } else {
        0.0
    }
}

/// Solves the weighted-l1 penalized problem at a fixed threshold.
///
/// The effective penalty on coordinate `j` is `lambda * w_j * D_j(tau)`, with
/// `w_j = 1` when `lla_weights` is `None`. Coordinates locked in `weights` are
/// held at exactly zero.
pub fn solve_penalized(
    design: &ThresholdDesign<'_>,
    spec: &LossSpec,
    lambda: f64,
    weights: &PenaltyWeights,
    lla_weights: Option<&[f64]>,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    solve_penalized_warm(design, spec, lambda, weights, lla_weights, init, None, opts)
}

/// [`solve_penalized`] with an additional warm start for the per-observation
/// loss subgradient (see [`SolveResult::dual`]). Ignored for the logistic loss.
#[allow(clippy::too_many_arguments)]
pub fn solve_penalized_warm(
    design: &ThresholdDesign<'_>,
    spec: &LossSpec,
    lambda: f64,
    weights: &PenaltyWeights,
    lla_weights: Option<&[f64]>,
    init: Option<&[f64]>,
    dual: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    let dual = match dual {
        Some(d) if d.len() != design.n() => {
            return Err(Error::DimensionMismatch(format!(
                "dual warm start has {} entries, expected {}",
                d.len(),
                design.n()
            )))
        }
        Some(d) if d.iter().all(|v| v.is_finite()) => Some(d),
        _ => None,
    };
    let problem = Problem::new(design, spec, lambda, weights, lla_weights)?;
    let w = problem.width();
    let mut start = match init {
        Some(a) if a.len() != w => {
            return Err(Error::DimensionMismatch(format!(
                "initial point has {} entries, design has {w} columns",
                a.len()
            )))
        }
        Some(a) => a.to_vec(),
        None => vec![0.0; w],
    };
    for (a, &l) in start.iter_mut().zip(&problem.locked) {
        if l || !a.is_finite() {
            *a = 0.0;
        }
    }
    let mut result = match spec.kind {
        LossKind::Quantile => {
            let exact = match opts.quantile_method {
                QuantileMethod::Simplex => simplex::solve(&problem, &start, opts),
                QuantileMethod::Admm => None,
            };
            match exact {
                Some(r) => r,
                None => {
                    if opts.quantile_method == QuantileMethod::Simplex {
                        log::debug!("simplex stalled at tau = {}; falling back to ADMM", design.tau());
                    }
                    admm::solve(&problem, start, dual, opts)?
                }
            }
        }
        LossKind::Logistic => fista::solve(&problem, start, opts)?,
    };
    if Problem::project_box(&mut result.alpha, opts.box_bound) {
        log::warn!(
            "solution left the parameter box |alpha| <= {}; projected",
            opts.box_bound
        );
        result.objective = problem.objective(&result.alpha);
    }
    if !result.objective.is_finite() || result.alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite iterate at tau = {}",
            design.tau()
        )));
    }
    result.kkt_violation = problem.kkt_violation(&result.alpha, ZERO_RESIDUAL_TOL);
    Ok(result)
}

/// Largest per-coordinate KKT violation of `alpha` for the penalized problem.
/// `tol` is the relative tolerance under which a check-loss residual counts as
/// zero.
pub fn check_optimality(
    design: &ThresholdDesign<'_>,
    spec: &LossSpec,
    lambda: f64,
    weights: &PenaltyWeights,
    lla_weights: Option<&[f64]>,
    alpha: &[f64],
    tol: f64,
) -> Result<f64> {
    let problem = Problem::new(design, spec, lambda, weights, lla_weights)?;
    if alpha.len() != problem.width() {
        return Err(Error::DimensionMismatch(format!(
            "alpha has {} entries, design has {} columns",
            alpha.len(),
            problem.width()
        )));
    }
    Ok(problem.kkt_violation(alpha, tol))
}

/// Penalized objective `S_n(alpha, tau)`.
pub fn penalized_objective(
    design: &ThresholdDesign<'_>,
    spec: &LossSpec,
    lambda: f64,
    weights: &PenaltyWeights,
    lla_weights: Option<&[f64]>,
    alpha: &[f64],
) -> Result<f64> {
    let problem = Problem::new(design, spec, lambda, weights, lla_weights)?;
    if alpha.len() != problem.width() {
        return Err(Error::DimensionMismatch("alpha width".into()));
    }
    Ok(problem.objective(alpha))
}

/// Smallest `lambda` at which the all-zero fit is optimal, using the point
/// derivative at the zero predictor.
pub fn lambda_max(design: &ThresholdDesign<'_>, spec: &LossSpec, weights: &PenaltyWeights) -> f64 {
    let y = design.data().y();
    let h: Vec<f64> = y.iter().map(|&yi| spec.derivative(yi, 0.0)).collect();
    let n = design.n() as f64;
    (0..design.width())
        .filter(|&j| !weights.zero_locked()[j])
        .map(|j| (design.col_dot(j, &h) / n).abs() / weights.scale(j))
        .fold(0.0, f64::max)
}
