//! The two-step estimator and the oracle baselines.
//!
//! 1. profile the l1-penalized fit over the threshold grid;
//! 2. take the grid minimizer `(alpha_hat, tau_hat)`;
//! 3. refit at `tau_hat` with penalty `mu * w_j * D_j(tau_hat)`, where `w_j` is
//!    the one-step SCAD weight of `alpha_hat_j`;
//! 4. re-estimate the threshold with the refitted coefficients held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss::LossSpec;
use crate::model::{active_set, ActiveSet, CoefficientPair, Dataset, IndicatorDirection, ThresholdDesign};
use crate::penalty::{penalty_weights, scad_lla_weights, ScadConfig};
use crate::solver::{solve_penalized, SolverOptions};
use crate::threshold::{argmin_tau, build_grid, profile, refit_tau, GridSpec, ProfileResult, ProfileSettings, TauGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub spec: LossSpec,
    pub lambda: f64,
    pub scad: ScadConfig,
    pub grid: GridSpec,
    pub direction: IndicatorDirection,
    pub solver: SolverOptions,
    pub active_tol: f64,
    /// Grid chunks for the profile sweep (1 = fully sequential warm starts).
    pub profile_chunks: usize,
}

impl FitConfig {
    /// Tuning used for the median-regression experiments:
    /// `lambda = 0.03`, `mu = log(p) * lambda`.
    pub fn median_default(p: usize) -> Self {
        let lambda = 0.03;
        Self {
            spec: LossSpec::median(),
            lambda,
            scad: ScadConfig {
                mu: (p as f64).ln() * lambda,
                a: crate::penalty::DEFAULT_SCAD_A,
            },
            grid: GridSpec::default(),
            direction: IndicatorDirection::Less,
            solver: SolverOptions::default(),
            active_tol: crate::model::DEFAULT_ACTIVE_TOL,
            profile_chunks: 1,
        }
    }

    /// Tuning used for the logistic experiments:
    /// `lambda = 0.03`, `mu = 0.5 * log(p) * lambda`.
    pub fn logistic_default(p: usize) -> Self {
        let mut cfg = Self::median_default(p);
        cfg.spec = LossSpec::logistic();
        cfg.scad.mu = 0.5 * (p as f64).ln() * cfg.lambda;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        self.scad.validate()?;
        self.grid.validate()?;
        self.solver.validate()?;
        if !(self.active_tol >= 0.0) {
            return Err(invalid("active_tol must be >= 0"));
        }
        if self.profile_chunks == 0 {
            return Err(invalid("profile_chunks must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub alpha_hat: CoefficientPair,
    pub tau_hat: f64,
    pub profile: ProfileResult,
    pub objective: f64,
    pub grid: TauGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScadFit {
    pub alpha_tilde: CoefficientPair,
    pub scad_weights: Vec<f64>,
    pub objective: f64,
    pub kkt_violation: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepFit {
    pub lasso: LassoFit,
    pub alpha_tilde: CoefficientPair,
    pub tau_tilde: f64,
    /// Indices into `beta` of the nonzero refitted coefficients.
    pub active_beta: ActiveSet,
    /// Indices into `delta` of the nonzero refitted coefficients.
    pub active_delta: ActiveSet,
    pub scad_weights: Vec<f64>,
    pub scad_objective: f64,
    pub scad_kkt_violation: f64,
    pub direction: IndicatorDirection,
}

impl TwoStepFit {
    /// Active set of `alpha_tilde` in the `2p` layout.
    pub fn active(&self) -> ActiveSet {
        let p = self.alpha_tilde.p();
        ActiveSet::from_indices(
            self.active_beta
                .indices()
                .iter()
                .copied()
                .chain(self.active_delta.indices().iter().map(|j| j + p))
                .collect(),
        )
    }
}

/// Steps 1 and 2.
pub fn fit_lasso(data: &Dataset, config: &FitConfig) -> Result<LassoFit> {
    config.validate()?;
    let grid = build_grid(data, &config.grid)?;
    let settings = ProfileSettings {
        chunks: config.profile_chunks,
        ..ProfileSettings::new(config.spec, config.lambda, config.direction, config.solver)
    };
    let profile = profile(data, &grid, &settings)?;
    let (tau_hat, alpha_hat) = argmin_tau(&profile)?;
    let objective = profile.best().objective;
    Ok(LassoFit {
        alpha_hat,
        tau_hat,
        profile,
        objective,
        grid,
    })
}

/// Step 3: one SCAD-reweighted l1 refit at `tau_hat`, warm-started from
/// `alpha_hat`.
pub fn fit_scad(data: &Dataset, lasso: &LassoFit, config: &FitConfig) -> Result<ScadFit> {
    config.validate()?;
    let alpha_hat = lasso.alpha_hat.as_alpha();
    let weights_lla = scad_lla_weights(&alpha_hat, &config.scad);
    let design = ThresholdDesign::new(data, lasso.tau_hat, config.direction)?;
    let weights = penalty_weights(&design);
    let res = solve_penalized(
        &design,
        &config.spec,
        config.scad.mu,
        &weights,
        Some(&weights_lla),
        Some(&alpha_hat),
        &config.solver,
    )?;
    if !res.converged {
        log::warn!("SCAD refit at tau = {} did not converge", lasso.tau_hat);
    }
    Ok(ScadFit {
        alpha_tilde: CoefficientPair::from_alpha(&res.alpha)?,
        scad_weights: weights_lla,
        objective: res.objective,
        kkt_violation: res.kkt_violation,
        converged: res.converged,
    })
}

/// Steps 1 through 4.
pub fn fit_full(data: &Dataset, config: &FitConfig) -> Result<TwoStepFit> {
    let lasso = fit_lasso(data, config)?;
    let scad = fit_scad(data, &lasso, config)?;
    let tau_tilde = refit_tau(data, &scad.alpha_tilde, &config.spec, config.direction, &lasso.grid)?;
    let active_beta = active_set(&scad.alpha_tilde.beta, config.active_tol)?;
    let active_delta = active_set(&scad.alpha_tilde.delta, config.active_tol)?;
    Ok(TwoStepFit {
        lasso,
        alpha_tilde: scad.alpha_tilde,
        tau_tilde,
        active_beta,
        active_delta,
        scad_weights: scad.scad_weights,
        scad_objective: scad.objective,
        scad_kkt_violation: scad.kkt_violation,
        direction: config.direction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub alpha: CoefficientPair,
    pub tau: f64,
    /// Whether `tau` was profiled over the grid rather than supplied.
    pub profiled: bool,
    pub risk: f64,
}

/// Unpenalized fit restricted to `truth_active` (in the `2p` layout).
///
/// With `tau0` the threshold is fixed (the first oracle); without it the
/// restricted risk is profiled over `grid` (the second oracle).
pub fn fit_oracle(
    data: &Dataset,
    truth_active: &ActiveSet,
    tau0: Option<f64>,
    spec: &LossSpec,
    direction: IndicatorDirection,
    grid: &TauGrid,
    solver: &SolverOptions,
) -> Result<OracleFit> {
    let w = 2 * data.p();
    if truth_active.indices().iter().any(|&j| j >= w) {
        return Err(invalid("oracle active set exceeds the coefficient width"));
    }
    let lock: Vec<bool> = (0..w).map(|j| !truth_active.contains(j)).collect();
    match tau0 {
        Some(tau) => {
            let design = ThresholdDesign::new(data, tau, direction)?;
            let mut weights = penalty_weights(&design);
            weights.lock(&lock);
            let res = solve_penalized(&design, spec, 0.0, &weights, None, None, solver)?;
            if !res.converged {
                return Err(Error::NumericalFailure(format!("oracle fit at tau = {tau} did not converge")));
            }
            Ok(OracleFit {
                alpha: CoefficientPair::from_alpha(&res.alpha)?,
                tau,
                profiled: false,
                risk: res.objective,
            })
        }
        None => {
            let settings = ProfileSettings {
                lock: Some(&lock),
                ..ProfileSettings::new(*spec, 0.0, direction, *solver)
            };
            let prof = profile(data, grid, &settings)?;
            let best = prof.best();
            Ok(OracleFit {
                alpha: CoefficientPair::from_alpha(&best.alpha_hat)?,
                tau: best.tau,
                profiled: true,
                risk: best.objective,
            })
        }
    }
}
