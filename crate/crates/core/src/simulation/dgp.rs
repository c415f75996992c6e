//! Data-generating processes for the Monte Carlo designs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::loss::{LossKind, LossSpec};
use crate::model::{ActiveSet, CoefficientPair, Dataset, IndicatorDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    StdNormal,
    Logistic01,
}

/// The two simulation designs.
///
/// `Median61`: `y = x'b + 1{q < t0} x'd + e`, `e ~ N(0,1)`, with
/// `b = (0.5, 0, 0.5, 0, ...)`, `d = (0, 1, 1, 0, ...)`.
///
/// `Logit62`: `y = 1{x'b + 1{q < t0} x'd + e > 0}`, `e` standard logistic, with
/// `b = (1.5, 0, 1.5, 0, ...)`, `d = (0, 3, 3, 0, ...)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Median61,
    Logit62,
}

impl Design {
    pub fn name(self) -> &'static str {
        match self {
            Design::Median61 => "median61",
            Design::Logit62 => "logit62",
        }
    }

    pub fn loss(self) -> LossSpec {
        match self {
            Design::Median61 => LossSpec::median(),
            Design::Logit62 => LossSpec::logistic(),
        }
    }
}

impl std::str::FromStr for Design {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "median61" | "median" => Ok(Design::Median61),
            "logit62" | "logit" | "logistic" => Ok(Design::Logit62),
            other => Err(invalid(format!("unknown design `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub beta0: Vec<f64>,
    pub delta0: Vec<f64>,
    pub tau0: f64,
    pub direction: IndicatorDirection,
    pub spec: LossSpec,
    pub noise: Noise,
    /// AR(1) correlation of the Gaussian regressors.
    pub rho: f64,
}

impl TrueModel {
    pub fn for_design(design: Design, p: usize, tau0: f64) -> Result<Self> {
        if p < 3 {
            return Err(invalid(format!("the simulation designs need p >= 3, got {p}")));
        }
        let (b, d, spec, noise) = match design {
            Design::Median61 => (0.5, 1.0, LossSpec::median(), Noise::StdNormal),
            Design::Logit62 => (1.5, 3.0, LossSpec::logistic(), Noise::Logistic01),
        };
        let mut beta0 = vec![0.0; p];
        let mut delta0 = vec![0.0; p];
        beta0[0] = b;
        beta0[2] = b;
        delta0[1] = d;
        delta0[2] = d;
        Ok(Self {
            beta0,
            delta0,
            tau0,
            direction: IndicatorDirection::Less,
            spec,
            noise,
            rho: 0.5,
        })
    }

    /// The same design with the threshold effect removed.
    pub fn without_change(mut self) -> Self {
        self.delta0.iter_mut().for_each(|d| *d = 0.0);
        self
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    pub fn alpha0(&self) -> CoefficientPair {
        CoefficientPair {
            beta: self.beta0.clone(),
            delta: self.delta0.clone(),
        }
    }

    /// Support of `(beta0, delta0)` in the `2p` layout.
    pub fn active(&self) -> ActiveSet {
        let p = self.p();
        ActiveSet::from_indices(
            self.beta0
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, _)| j)
                .chain(self.delta0.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| p + j))
                .collect(),
        )
    }

    /// `x'beta0 + 1{regime} x'delta0` for one observation.
    pub fn index(&self, x: &[f64], q: f64) -> f64 {
        let base: f64 = x.iter().zip(&self.beta0).map(|(a, b)| a * b).sum();
        if self.direction.in_regime(q, self.tau0) {
            base + x.iter().zip(&self.delta0).map(|(a, b)| a * b).sum::<f64>()
        } else {
            base
        }
    }

    /// Response for a given index and noise draw.
    pub fn response(&self, index: f64, eps: f64) -> f64 {
        match self.spec.kind {
            LossKind::Quantile => index + eps,
            LossKind::Logistic => {
                if index + eps > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.noise {
            Noise::StdNormal => rng.sample(StandardNormal),
            Noise::Logistic01 => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
        }
    }
}

/// `n x p` Gaussian rows with `Cov(x_j, x_k) = rho^|j-k|`, column-major.
pub fn gen_ar1_gaussian<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(invalid(format!("AR(1) coefficient must satisfy |rho| < 1, got {rho}")));
    }
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = vec![0.0; n * p];
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { z } else { rho * prev + innov * z };
            x[j * n + i] = v;
            prev = v;
        }
    }
    Ok(x)
}

/// Draws `(x, q)` and returns the regressors (column-major), `q`, and the
/// true index of every observation.
pub fn draw_covariates<R: Rng + ?Sized>(
    truth: &TrueModel,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let p = truth.p();
    let x = gen_ar1_gaussian(n, p, truth.rho, rng)?;
    let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut index = vec![0.0; n];
    for j in 0..p {
        let col = &x[j * n..(j + 1) * n];
        let (b, d) = (truth.beta0[j], truth.delta0[j]);
        if b == 0.0 && d == 0.0 {
            continue;
        }
        for i in 0..n {
            let mut coef = b;
            if truth.direction.in_regime(q[i], truth.tau0) {
                coef += d;
            }
            index[i] += coef * col[i];
        }
    }
    Ok((x, q, index))
}

/// Draws a sample of size `n` from `truth`.
pub fn gen_from_truth<R: Rng + ?Sized>(truth: &TrueModel, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("sample size must be >= 1"));
    }
    let (x, q, index) = draw_covariates(truth, n, rng)?;
    let y: Vec<f64> = index.iter().map(|&m| truth.response(m, truth.draw_noise(rng))).collect();
    Dataset::from_columns(y, x, q, truth.p())
}

pub fn gen_dataset<R: Rng + ?Sized>(
    design: Design,
    n: usize,
    p: usize,
    tau0: f64,
    rng: &mut R,
) -> Result<(Dataset, TrueModel)> {
    let truth = TrueModel::for_design(design, p, tau0)?;
    let data = gen_from_truth(&truth, n, rng)?;
    Ok((data, truth))
}
