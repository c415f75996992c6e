//! Pointwise losses `rho(y, t)`: the quantile check loss and the logistic
//! negative log-likelihood, with (sub)gradients and proximal maps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{CoefficientPair, ThresholdDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Quantile,
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quantile" | "median" => Ok(LossKind::Quantile),
            "logistic" | "logit" => Ok(LossKind::Logistic),
            other => Err(invalid(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Quantile level; ignored for the logistic loss.
    pub gamma: f64,
}

impl LossSpec {
    pub fn quantile(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid(format!("quantile level must lie in (0,1), got {gamma}")));
        }
        Ok(Self {
            kind: LossKind::Quantile,
            gamma,
        })
    }

    pub fn median() -> Self {
        Self {
            kind: LossKind::Quantile,
            gamma: 0.5,
        }
    }

    pub fn logistic() -> Self {
        Self {
            kind: LossKind::Logistic,
            gamma: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::Quantile if !(self.gamma > 0.0 && self.gamma < 1.0) => Err(invalid(format!(
                "quantile level must lie in (0,1), got {}",
                self.gamma
            ))),
            _ => Ok(()),
        }
    }

    /// Checks that `y` is admissible for this loss.
    pub fn check_response(&self, y: f64) -> Result<()> {
        if self.kind == LossKind::Logistic && y != 0.0 && y != 1.0 {
            return Err(invalid(format!("logistic response must be 0 or 1, got {y}")));
        }
        Ok(())
    }

    /// Lipschitz constant of `t -> rho(y, t)`.
    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            LossKind::Quantile => self.gamma.max(1.0 - self.gamma),
            LossKind::Logistic => 1.0,
        }
    }

    /// Unchecked loss value.
    #[inline]
    pub fn value(&self, y: f64, t: f64) -> f64 {
        match self.kind {
            LossKind::Quantile => {
                let r = y - t;
                if r <= 0.0 {
                    r * (self.gamma - 1.0)
                } else {
                    r * self.gamma
                }
            }
            // log(1 + e^t) - y t, with softplus evaluated without overflow
            LossKind::Logistic => softplus(t) - y * t,
        }
    }

    /// Unchecked derivative in `t`; at a zero quantile residual this is the
    /// upper end `1 - gamma` of the subdifferential.
    #[inline]
    pub fn derivative(&self, y: f64, t: f64) -> f64 {
        match self.kind {
            LossKind::Quantile => {
                if y - t <= 0.0 {
                    1.0 - self.gamma
                } else {
                    -self.gamma
                }
            }
            LossKind::Logistic => sigmoid(t) - y,
        }
    }

    /// Unchecked proximal map `argmin_z c * rho(y, z) + (z - v)^2 / 2`.
    #[inline]
    pub fn prox(&self, y: f64, v: f64, c: f64) -> f64 {
        match self.kind {
            LossKind::Quantile => {
                let r = y - v;
                let hi = c * self.gamma;
                let lo = c * (1.0 - self.gamma);
                let u = if r > hi {
                    r - hi
                } else if r < -lo {
                    r + lo
                } else {
                    0.0
                };
                y - u
            }
            LossKind::Logistic => logistic_prox(y, v, c),
        }
    }
}

#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Solves `c (sigmoid(z) - y) + z - v = 0` by Newton's method, falling back to
/// bisection on `[v - c, v + c]`, which always brackets the root.
fn logistic_prox(y: f64, v: f64, c: f64) -> f64 {
    let grad = |z: f64| c * (sigmoid(z) - y) + z - v;
    let (mut lo, mut hi) = (v - c, v + c);
    let mut z = v;
    for _ in 0..50 {
        let g = grad(z);
        if g.abs() <= 1e-12 {
            return z;
        }
        if g > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let s = sigmoid(z);
        let h = 1.0 + c * s * (1.0 - s);
        let step = z - g / h;
        z = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    z
}

pub fn loss_value(spec: &LossSpec, y: f64, t: f64) -> Result<f64> {
    spec.validate()?;
    spec.check_response(y)?;
    Ok(spec.value(y, t))
}

pub fn loss_derivative(spec: &LossSpec, y: f64, t: f64) -> Result<f64> {
    spec.validate()?;
    spec.check_response(y)?;
    Ok(spec.derivative(y, t))
}

pub fn loss_prox(spec: &LossSpec, y: f64, v: f64, c: f64) -> Result<f64> {
    spec.validate()?;
    if !(c > 0.0) {
        return Err(invalid(format!("prox scale must be > 0, got {c}")));
    }
    spec.check_response(y)?;
    Ok(spec.prox(y, v, c))
}

/// `(1/n) sum_i rho(y_i, t_i)` for a given predictor.
pub(crate) fn mean_loss(spec: &LossSpec, y: &[f64], t: &[f64]) -> f64 {
    let s: f64 = y.iter().zip(t).map(|(&y, &t)| spec.value(y, t)).sum();
    s / y.len() as f64
}

/// Average loss of `alpha` on the design.
pub fn empirical_risk(design: &ThresholdDesign<'_>, alpha: &CoefficientPair, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    let y = design.data().y();
    for &v in y {
        spec.check_response(v)?;
    }
    let t = crate::model::linear_predictor(design, alpha)?;
    Ok(mean_loss(spec, y, &t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, IndicatorDirection};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Golden-section search on a unimodal function, after a coarse grid scan.
    fn minimize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let (mut best, mut best_v) = (lo, f(lo));
        for k in 1..=steps {
            let z = lo + k as f64 * h;
            let v = f(z);
            if v < best_v {
                best = z;
                best_v = v;
            }
        }
        let (mut a, mut b) = (best - h, best + h);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) <= f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn value_examples() {
        assert_eq!(loss_value(&LossSpec::median(), 1.0, 0.0).unwrap(), 0.5);
        let q25 = LossSpec::quantile(0.25).unwrap();
        assert_relative_eq!(loss_value(&q25, 0.0, 2.0).unwrap(), 1.5);
        assert_relative_eq!(
            loss_value(&LossSpec::logistic(), 1.0, 0.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert!(loss_value(&LossSpec::logistic(), 0.5, 0.0).is_err());
    }

    #[test]
    fn logistic_extreme_arguments_stay_finite() {
        let s = LossSpec::logistic();
        assert_relative_eq!(s.value(0.0, 800.0), 800.0);
        assert!(s.value(1.0, 800.0) < 1e-300);
        assert_relative_eq!(s.value(1.0, -800.0), 800.0);
    }

    #[test]
    fn derivative_examples() {
        let m = LossSpec::median();
        assert_eq!(loss_derivative(&m, 1.0, 0.0).unwrap(), -0.5);
        assert_eq!(loss_derivative(&m, 0.0, 0.0).unwrap(), 0.5);
        assert_eq!(loss_derivative(&LossSpec::logistic(), 1.0, 0.0).unwrap(), -0.5);
    }

    #[test]
    fn prox_examples_against_1d_minimization() {
        let m = LossSpec::median();
        let z = loss_prox(&m, 0.0, 3.0, 1.0).unwrap();
        let oracle = minimize_1d(|z| m.value(0.0, z) + 0.5 * (z - 3.0).powi(2), -5.0, 5.0);
        assert!((z - oracle).abs() < 1e-6);
        assert_eq!(z, 2.5);

        let z = loss_prox(&m, 0.0, 0.3, 1.0).unwrap();
        let oracle = minimize_1d(|z| m.value(0.0, z) + 0.5 * (z - 0.3).powi(2), -5.0, 5.0);
        assert!((z - oracle).abs() < 1e-6);
        assert_eq!(z, 0.0);

        assert!(loss_prox(&m, 0.0, 1.0, 0.0).is_err());
        assert!(loss_prox(&m, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn logistic_prox_vanishing_scale() {
        let s = LossSpec::logistic();
        for v in [-3.0, 0.0, 2.5] {
            let z = loss_prox(&s, 1.0, v, 1e-9).unwrap();
            assert!((z - v).abs() < 1e-8);
        }
    }

    #[test]
    fn risk_examples() {
        let d = Dataset::from_rows(
            vec![1.0, 2.0, 3.0],
            &[vec![1.0], vec![1.0], vec![1.0]],
            vec![0.0; 3],
        )
        .unwrap();
        let des = ThresholdDesign::new(&d, 0.5, IndicatorDirection::Greater).unwrap();
        let a = CoefficientPair::new(vec![2.0], vec![0.0]).unwrap();
        assert_relative_eq!(empirical_risk(&des, &a, &LossSpec::median()).unwrap(), 1.0 / 3.0);

        let one = Dataset::from_rows(vec![1.0], &[vec![1.0]], vec![0.0]).unwrap();
        let des = ThresholdDesign::new(&one, 0.5, IndicatorDirection::Greater).unwrap();
        let big = CoefficientPair::new(vec![50.0], vec![0.0]).unwrap();
        let r = empirical_risk(&des, &big, &LossSpec::logistic()).unwrap();
        assert!(r < 1e-20);
        assert_eq!(r, LossSpec::logistic().value(1.0, 50.0));
    }

    fn spec_strategy() -> impl Strategy<Value = LossSpec> {
        prop_oneof![
            (0.05f64..0.95).prop_map(|g| LossSpec::quantile(g).unwrap()),
            Just(LossSpec::logistic()),
        ]
    }

    proptest! {
        #[test]
        fn convex_along_segments(spec in spec_strategy(), yb in any::<bool>(), yq in -5.0f64..5.0,
                                 t1 in -10.0f64..10.0, t2 in -10.0f64..10.0, w in 0.0f64..1.0) {
            let y = if spec.kind == LossKind::Logistic { if yb { 1.0 } else { 0.0 } } else { yq };
            let mid = spec.value(y, w * t1 + (1.0 - w) * t2);
            let chord = w * spec.value(y, t1) + (1.0 - w) * spec.value(y, t2);
            prop_assert!(mid <= chord + 1e-12);
        }

        #[test]
        fn lipschitz_in_prediction(spec in spec_strategy(), yb in any::<bool>(), yq in -5.0f64..5.0,
                                   t1 in -10.0f64..10.0, t2 in -10.0f64..10.0) {
            let y = if spec.kind == LossKind::Logistic { if yb { 1.0 } else { 0.0 } } else { yq };
            let lhs = (spec.value(y, t1) - spec.value(y, t2)).abs();
            prop_assert!(lhs <= spec.lipschitz() * (t1 - t2).abs() + 1e-12);
        }

        #[test]
        fn prox_satisfies_optimality(spec in spec_strategy(), yb in any::<bool>(), yq in -5.0f64..5.0,
                                     v in -10.0f64..10.0, c in 0.01f64..10.0) {
            let y = if spec.kind == LossKind::Logistic { if yb { 1.0 } else { 0.0 } } else { yq };
            let z = spec.prox(y, v, c);
            match spec.kind {
                LossKind::Quantile => {
                    // 0 in c * d/dz rho(y, z) + (z - v)
                    let r = y - z;
                    let (lo, hi) = if r > 0.0 {
                        (-spec.gamma, -spec.gamma)
                    } else if r < 0.0 {
                        (1.0 - spec.gamma, 1.0 - spec.gamma)
                    } else {
                        (-spec.gamma, 1.0 - spec.gamma)
                    };
                    let (a, b) = (c * lo + z - v, c * hi + z - v);
                    let dist = if a > 0.0 { a } else if b < 0.0 { -b } else { 0.0 };
                    prop_assert!(dist <= 1e-8, "dist {}", dist);
                }
                LossKind::Logistic => {
                    let g = c * (sigmoid(z) - y) + z - v;
                    prop_assert!(g.abs() <= 1e-8);
                }
            }
        }

        #[test]
        fn logistic_derivative_matches_central_difference(yb in any::<bool>(), t in -10.0f64..10.0) {
            let s = LossSpec::logistic();
            let y = if yb { 1.0 } else { 0.0 };
            let h = 1e-6;
            let fd = (s.value(y, t + h) - s.value(y, t - h)) / (2.0 * h);
            let d = s.derivative(y, t);
            prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1e-2), "fd {} d {}", fd, d);
        }
    }
}
