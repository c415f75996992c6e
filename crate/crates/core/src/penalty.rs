//! Penalty scales: the second-moment weights `D_j(tau)` of the augmented
//! columns and the one-step SCAD reweighting.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ThresholdDesign;

/// Columns whose root-mean-square falls below this are pinned at zero.
pub const DEGENERACY_FLOOR: f64 = 1e-10;

/// Conventional SCAD shape parameter.
pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    d: Vec<f64>,
    zero_locked: Vec<bool>,
}

impl PenaltyWeights {
    /// Raw root-mean-square column scales, including locked entries.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn zero_locked(&self) -> &[bool] {
        &self.zero_locked
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Scale used inside the penalty: `d_j`, or 1 for a locked coordinate.
    #[inline]
    pub fn scale(&self, j: usize) -> f64 {
        if self.zero_locked[j] {
            1.0
        } else {
            self.d[j]
        }
    }

    /// Additionally pins the coordinates flagged in `lock`.
    pub fn lock(&mut self, lock: &[bool]) {
        for (z, &l) in self.zero_locked.iter_mut().zip(lock) {
            *z |= l;
        }
    }

    pub fn locked_count(&self) -> usize {
        self.zero_locked.iter().filter(|&&z| z).count()
    }
}

pub fn penalty_weights(design: &ThresholdDesign<'_>) -> PenaltyWeights {
    let data = design.data();
    let n = data.n() as f64;
    let p = data.p();
    let regime = design.regime_indices();
    let mut d = vec![0.0; 2 * p];
    for j in 0..p {
        let col = data.column(j);
        d[j] = (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        d[p + j] = (regime.iter().map(|&i| col[i] * col[i]).sum::<f64>() / n).sqrt();
    }
    let zero_locked = d.iter().map(|&v| v < DEGENERACY_FLOOR).collect();
    PenaltyWeights { d, zero_locked }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadConfig {
    pub mu: f64,
    pub a: f64,
}

impl ScadConfig {
    pub fn new(mu: f64, a: f64) -> Result<Self> {
        let cfg = Self { mu, a };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(invalid(format!("SCAD mu must be > 0, got {}", self.mu)));
        }
        if !(self.a > 1.0 && self.a.is_finite()) {
            return Err(invalid(format!("SCAD a must be > 1, got {}", self.a)));
        }
        Ok(())
    }

    /// Local linear approximation weight of the SCAD derivative at `|v|`,
    /// normalized by `mu`.
    #[inline]
    pub fn weight(&self, v: f64) -> f64 {
        let v = v.abs();
        if v < self.mu {
            1.0
        } else if v > self.a * self.mu {
            0.0
        } else {
            (self.a * self.mu - v) / (self.mu * (self.a - 1.0))
        }
    }
}

pub fn scad_lla_weights(alpha_hat: &[f64], cfg: &ScadConfig) -> Vec<f64> {
    alpha_hat.iter().map(|&v| cfg.weight(v)).collect()
}
