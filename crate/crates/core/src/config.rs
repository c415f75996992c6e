//! Flat key-value configuration files.
//!
//! One `key=value` pair per whitespace-separated token; `#` starts a comment.
//! Unknown keys are rejected. Command-line overrides replace file values.
//!
//! ```text
//! # Table 1, p = 50
//! design=median61 p=50 n=400
//! lambda=0.03 mu=auto
//! grid_mode=equispaced grid_n=71 tau_low=0.15 tau_high=0.85
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::model::IndicatorDirection;
use crate::penalty::{ScadConfig, DEFAULT_SCAD_A};
use crate::pipeline::FitConfig;
use crate::simulation::dgp::Design;
use crate::simulation::experiment::ExperimentConfig;
use crate::simulation::risk::{RiskMethod, DEFAULT_N_VAL};
use crate::solver::{QuantileMethod, SolverOptions};
use crate::threshold::{GridMode, GridSpec};

pub const KNOWN_KEYS: &[&str] = &[
    "loss",
    "gamma",
    "lambda",
    "mu",
    "scad_a",
    "tau_low",
    "tau_high",
    "grid_mode",
    "grid_n",
    "direction",
    "seed",
    "replications",
    "n",
    "p",
    "design",
    "risk_method",
    "n_val",
    "tau0",
    "no_change",
    "active_tol",
    "profile_chunks",
    "threads",
    "solver.quantile_method",
    "solver.max_iter",
    "solver.tol_primal",
    "solver.tol_dual",
    "solver.admm_rho",
    "solver.adaptive_rho",
    "solver.fista_tol",
    "solver.box_bound",
    "solver.inner_sweeps",
    "solver.kkt_tol",
    "solver.polish_every",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for token in line.split_whitespace() {
                let (key, value) = split_pair(token)?;
                if cfg.values.contains_key(key) {
                    return Err(config_err(key, "key given more than once"));
                }
                cfg.set(key, value)?;
            }
        }
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config {
                key: "config".into(),
                message: format!("cannot read {}: {e}", path.display()),
            })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_err(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = split_pair(o.as_ref())?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key).ok_or_else(|| config_err(key, "required key is missing"))?;
        v.parse().map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}")))
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.parse_or(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(config_err(key, format!("must be a positive number, got {v}")));
        }
        Ok(v)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key).map(str::to_ascii_lowercase).as_deref() {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(v) => Err(config_err(key, format!("expected true or false, got `{v}`"))),
        }
    }

    fn loss(&self, fallback: Option<LossSpec>) -> Result<LossSpec> {
        let kind = match (self.get("loss"), fallback) {
            (None, Some(spec)) => return self.with_gamma(spec),
            (None, None) => return Err(config_err("loss", "required key is missing")),
            (Some(k), _) => k.to_ascii_lowercase(),
        };
        let spec = match kind.as_str() {
            "quantile" => LossSpec::quantile(0.5)?,
            "median" => LossSpec::median(),
            "logistic" | "logit" => LossSpec::logistic(),
            other => return Err(config_err("loss", format!("unknown loss `{other}`"))),
        };
        self.with_gamma(spec)
    }

    fn with_gamma(&self, spec: LossSpec) -> Result<LossSpec> {
        match (spec.kind, self.get("gamma")) {
            (_, None) => Ok(spec),
            (LossKind::Logistic, Some(_)) => Err(config_err("gamma", "only applies to the quantile loss")),
            (LossKind::Quantile, Some(_)) => {
                let g: f64 = self.parse_or("gamma", 0.5)?;
                LossSpec::quantile(g).map_err(|e| config_err("gamma", e.to_string()))
            }
        }
    }

    fn grid(&self) -> Result<GridSpec> {
        let low = self.parse_or("tau_low", 0.15)?;
        let high = self.parse_or("tau_high", 0.85)?;
        if !(low < high) {
            return Err(config_err("tau_high", format!("must exceed tau_low ({low}), got {high}")));
        }
        let n: usize = self.parse_or("grid_n", 71)?;
        let mode = match self.get("grid_mode").map(str::to_ascii_lowercase).as_deref() {
            None | Some("equispaced") => GridMode::Equispaced(n),
            Some("quantile") => GridMode::QuantileApprox(n),
            Some("observed") => GridMode::Observed,
            Some(other) => {
                return Err(config_err(
                    "grid_mode",
                    format!("unknown grid mode `{other}` (expected equispaced, quantile or observed)"),
                ))
            }
        };
        GridSpec::new(low, high, mode).map_err(|e| config_err("grid_n", e.to_string()))
    }

    fn solver(&self) -> Result<SolverOptions> {
        let d = SolverOptions::default();
        let opts = SolverOptions {
            quantile_method: self.parse_or::<QuantileMethod>("solver.quantile_method", d.quantile_method)?,
            max_iter: self.parse_or("solver.max_iter", d.max_iter)?,
            tol_primal: self.positive("solver.tol_primal", d.tol_primal)?,
            tol_dual: self.positive("solver.tol_dual", d.tol_dual)?,
            admm_rho: self.positive("solver.admm_rho", d.admm_rho)?,
            adaptive_rho: self.flag("solver.adaptive_rho", d.adaptive_rho)?,
            fista_tol: self.positive("solver.fista_tol", d.fista_tol)?,
            box_bound: self.positive("solver.box_bound", d.box_bound)?,
            inner_sweeps: self.parse_or("solver.inner_sweeps", d.inner_sweeps)?,
            kkt_tol: self.positive("solver.kkt_tol", d.kkt_tol)?,
            polish_every: self.parse_or("solver.polish_every", d.polish_every)?,
        };
        opts.validate().map_err(|e| config_err("solver", e.to_string()))?;
        Ok(opts)
    }

    /// Estimator settings for data with `p` regressors. `fallback_loss` is
    /// used when the file does not name a loss.
    pub fn fit_config(&self, p: usize, fallback_loss: Option<LossSpec>, default_direction: IndicatorDirection) -> Result<FitConfig> {
        let spec = self.loss(fallback_loss)?;
        let lambda = self.positive("lambda", 0.03)?;
        let mu = match self.get("mu").map(str::to_ascii_lowercase).as_deref() {
            None | Some("auto") => {
                let factor = match spec.kind {
                    LossKind::Quantile => 1.0,
                    LossKind::Logistic => 0.5,
                };
                factor * (p.max(2) as f64).ln() * lambda
            }
            Some(_) => self.positive("mu", 0.0)?,
        };
        let a = self.parse_or("scad_a", DEFAULT_SCAD_A)?;
        let scad = ScadConfig::new(mu, a).map_err(|e| config_err("scad_a", e.to_string()))?;
        let active_tol = self.parse_or("active_tol", crate::model::DEFAULT_ACTIVE_TOL)?;
        if !(active_tol >= 0.0) {
            return Err(config_err("active_tol", "must be >= 0"));
        }
        let profile_chunks: usize = self.parse_or("profile_chunks", 1)?;
        if profile_chunks == 0 {
            return Err(config_err("profile_chunks", "must be >= 1"));
        }
        let cfg = FitConfig {
            spec,
            lambda,
            scad,
            grid: self.grid()?,
            direction: self.parse_or("direction", default_direction)?,
            solver: self.solver()?,
            active_tol,
            profile_chunks,
        };
        cfg.validate().map_err(|e| config_err("config", e.to_string()))?;
        Ok(cfg)
    }

    /// Monte Carlo settings; `design` and `p` are required.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let design: Design = self.require("design")?;
        let p: usize = self.require("p")?;
        if p < 3 {
            return Err(config_err("p", format!("the simulation designs need p >= 3, got {p}")));
        }
        let n: usize = self.parse_or("n", 400)?;
        if n == 0 {
            return Err(config_err("n", "must be >= 1"));
        }
        let replications: usize = self.parse_or("replications", 200)?;
        if replications == 0 {
            return Err(config_err("replications", "must be >= 1"));
        }
        let fit = self.fit_config(p, Some(design.loss()), IndicatorDirection::Less)?;
        if fit.spec != design.loss() {
            return Err(config_err("loss", format!("design {} uses a different loss", design.name())));
        }
        if fit.direction != IndicatorDirection::Less {
            return Err(config_err("direction", "the simulation designs use direction=less"));
        }
        let n_val: usize = self.parse_or("n_val", DEFAULT_N_VAL)?;
        let risk = match self.get("risk_method").map(str::to_ascii_lowercase).as_deref() {
            None | Some("closed_form") => RiskMethod::ClosedFormConditional(n_val),
            Some("fresh_sample") => RiskMethod::FreshSample(n_val),
            Some(other) => {
                return Err(config_err(
                    "risk_method",
                    format!("unknown method `{other}` (expected closed_form or fresh_sample)"),
                ))
            }
        };
        risk.validate().map_err(|e| config_err("n_val", e.to_string()))?;
        let tau0: f64 = self.parse_or("tau0", 0.5)?;
        if !(tau0 > 0.0 && tau0 < 1.0) {
            return Err(config_err("tau0", format!("must lie in (0, 1), got {tau0}")));
        }
        let cfg = ExperimentConfig {
            design,
            n,
            p,
            replications,
            master_seed: self.parse_or("seed", 1)?,
            tau0,
            no_change: self.flag("no_change", false)?,
            fit,
            risk,
        };
        cfg.validate().map_err(|e| config_err("config", e.to_string()))?;
        Ok(cfg)
    }

    /// Worker threads requested by the file (`0` = automatic).
    pub fn threads(&self) -> Result<Option<usize>> {
        self.get("threads").map(|_| self.parse_or("threads", 0)).transpose()
    }
}

fn split_pair(token: &str) -> Result<(&str, &str)> {
    let (k, v) = token
        .split_once('=')
        .ok_or_else(|| config_err(token, "expected key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(config_err(token, "empty key"));
    }
    Ok((k, v.trim()))
}
