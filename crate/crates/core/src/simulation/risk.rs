//! Excess risk `R(alpha, tau) = E rho(Y, X(tau)'alpha) - E rho(Y, X(tau0)'alpha0)`
//! estimated on a fresh validation sample.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::dgp::{draw_covariates, Noise, TrueModel};
use crate::error::{invalid, Error, Result};
use crate::loss::{softplus, LossKind};
use crate::model::{CoefficientPair, IndicatorDirection};

pub const DEFAULT_N_VAL: usize = 100_000;
pub const MIN_N_VAL: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", content = "n_val", rename_all = "snake_case")]
pub enum RiskMethod {
    /// Averages the analytic conditional risk given `(x, q)`.
    ClosedFormConditional(usize),
    /// Averages the raw loss on fresh `(y, x, q)` draws.
    FreshSample(usize),
}

impl Default for RiskMethod {
    fn default() -> Self {
        RiskMethod::ClosedFormConditional(DEFAULT_N_VAL)
    }
}

impl RiskMethod {
    pub fn n_val(self) -> usize {
        match self {
            RiskMethod::ClosedFormConditional(n) | RiskMethod::FreshSample(n) => n,
        }
    }

    pub fn validate(self) -> Result<()> {
        if self.n_val() < MIN_N_VAL {
            return Err(invalid(format!(
                "validation sample size must be >= {MIN_N_VAL}, got {}",
                self.n_val()
            )));
        }
        Ok(())
    }
}

/// Expected check loss of `m + e` with `e ~ N(0, 1)`:
/// `gamma*m + phi(m) - m*(1 - Phi(m))`.
pub fn normal_check_risk(m: f64, gamma: f64) -> f64 {
    let z = Normal::standard();
    gamma * m + z.pdf(m) - m * z.cdf(-m)
}

/// Expected logistic loss at prediction `t` when `P(y = 1) = sigmoid(t0)`.
pub fn logistic_cross_entropy(t: f64, t0: f64) -> f64 {
    let p0 = crate::loss::sigmoid(t0);
    softplus(t) - p0 * t
}

/// A validation sample shared by every estimator evaluated in one
/// replication.
#[derive(Debug, Clone)]
pub struct ValidationSample {
    n: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    true_index: Vec<f64>,
    /// Observed responses (only for [`RiskMethod::FreshSample`]).
    y: Option<Vec<f64>>,
    method: RiskMethod,
}

impl ValidationSample {
    pub fn draw<R: Rng + ?Sized>(truth: &TrueModel, method: RiskMethod, rng: &mut R) -> Result<Self> {
        method.validate()?;
        let n = method.n_val();
        let (x, q, true_index) = draw_covariates(truth, n, rng)?;
        let y = match method {
            RiskMethod::FreshSample(_) => Some(
                true_index
                    .iter()
                    .map(|&m| truth.response(m, truth.draw_noise(rng)))
                    .collect(),
            ),
            RiskMethod::ClosedFormConditional(_) => None,
        };
        Ok(Self {
            n,
            x,
            q,
            true_index,
            y,
            method,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn method(&self) -> RiskMethod {
        self.method
    }

    /// Fitted index `x'beta + 1{regime} x'delta` at every validation point.
    pub fn fitted_index(&self, alpha: &CoefficientPair, tau: f64, direction: IndicatorDirection) -> Result<Vec<f64>> {
        let p = self.x.len() / self.n.max(1);
        if alpha.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "coefficients have p = {}, validation sample has p = {p}",
                alpha.p()
            )));
        }
        let n = self.n;
        let regime: Vec<bool> = self.q.iter().map(|&q| direction.in_regime(q, tau)).collect();
        let mut out = vec![0.0; n];
        for j in 0..p {
            let (b, d) = (alpha.beta[j], alpha.delta[j]);
            if b == 0.0 && d == 0.0 {
                continue;
            }
            let col = &self.x[j * n..(j + 1) * n];
            for i in 0..n {
                out[i] += col[i] * if regime[i] { b + d } else { b };
            }
        }
        Ok(out)
    }

    /// Excess risk of `(alpha, tau)` relative to the truth.
    pub fn excess_risk(
        &self,
        truth: &TrueModel,
        alpha: &CoefficientPair,
        tau: f64,
        direction: IndicatorDirection,
    ) -> Result<f64> {
        let fitted = self.fitted_index(alpha, tau, direction)?;
        let nf = self.n as f64;
        let total: f64 = match (&self.y, truth.spec.kind) {
            (Some(y), _) => (0..self.n)
                .map(|i| truth.spec.value(y[i], fitted[i]) - truth.spec.value(y[i], self.true_index[i]))
                .sum(),
            (None, LossKind::Quantile) => {
                if truth.noise != Noise::StdNormal {
                    return Err(invalid("closed-form quantile risk needs standard normal noise"));
                }
                let gamma = truth.spec.gamma;
                let base = normal_check_risk(0.0, gamma);
                (0..self.n)
                    .map(|i| normal_check_risk(self.true_index[i] - fitted[i], gamma) - base)
                    .sum()
            }
            (None, LossKind::Logistic) => {
                if truth.noise != Noise::Logistic01 {
                    return Err(invalid("closed-form logistic risk needs standard logistic noise"));
                }
                (0..self.n)
                    .map(|i| {
                        let t0 = self.true_index[i];
                        logistic_cross_entropy(fitted[i], t0) - logistic_cross_entropy(t0, t0)
                    })
                    .sum()
            }
        };
        Ok(total / nf)
    }
}

/// Draws a validation sample and evaluates one excess risk.
pub fn excess_risk<R: Rng + ?Sized>(
    truth: &TrueModel,
    alpha: &CoefficientPair,
    tau: f64,
    direction: IndicatorDirection,
    method: RiskMethod,
    rng: &mut R,
) -> Result<f64> {
    ValidationSample::draw(truth, method, rng)?.excess_risk(truth, alpha, tau, direction)
}
