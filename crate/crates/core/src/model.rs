//! Data model: the raw `(y, X, q)` sample, the threshold-augmented design
//! `X(tau) = (X, X * 1{regime})` and coefficient bookkeeping.
//!
//! Coefficient vectors of width `2p` are laid out as `(beta, delta)`: index
//! `j < p` addresses `beta_j`, index `p + j` addresses `delta_j`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default tolerance for active-set extraction.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-8;

/// A sample of `n` observations of `(y, q, x_1..x_p)`.
///
/// The regressor matrix is stored column-major so that per-coordinate sweeps
/// touch contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    q: Vec<f64>,
    n: usize,
    p: usize,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from a column-major `n x p` regressor buffer.
    pub fn from_columns(y: Vec<f64>, x_col_major: Vec<f64>, q: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(invalid("dataset needs at least one observation"));
        }
        if p == 0 {
            return Err(invalid("dataset needs at least one regressor"));
        }
        if q.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "q has {} entries, y has {n}",
                q.len()
            )));
        }
        if x_col_major.len() != n * p {
            return Err(Error::DimensionMismatch(format!(
                "x has {} entries, expected n*p = {}",
                x_col_major.len(),
                n * p
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|a| a.is_finite());
        if !finite(&y) || !finite(&q) || !finite(&x_col_major) {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self {
            y,
            x: x_col_major,
            q,
            n,
            p,
            feature_names: None,
        })
    }

    /// Builds a dataset from row vectors `rows[i] = x_i`.
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>], q: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for {} responses",
                rows.len(),
                y.len()
            )));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged regressor rows".into()));
        }
        let n = rows.len();
        let mut x = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                x[j * n + i] = *v;
            }
        }
        Self::from_columns(y, x, q, p)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {} regressors",
                names.len(),
                self.p
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Loads a CSV with a header row containing `y`, `q` and the regressors
    /// (all remaining columns, in file order).
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let y_col = find("y").ok_or_else(|| Error::Data("missing column `y`".into()))?;
        let q_col = find("q").ok_or_else(|| Error::Data("missing column `q`".into()))?;
        let x_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != y_col && c != q_col).collect();
        if x_cols.is_empty() {
            return Err(Error::Data("no regressor columns besides `y` and `q`".into()));
        }
        let names: Vec<String> = x_cols.iter().map(|&c| headers[c].to_string()).collect();

        let mut y = Vec::new();
        let mut q = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                let raw = rec.get(c).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "row {}: column `{}` has unparseable value `{raw}`",
                        line + 1,
                        &headers[c]
                    ))
                })
            };
            y.push(parse(y_col)?);
            q.push(parse(q_col)?);
            rows.push(x_cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?);
        }
        if y.is_empty() {
            return Err(Error::Data("csv has no data rows".into()));
        }
        Self::from_rows(y, &rows, q)
            .map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Data(m),
                other => other,
            })?
            .with_feature_names(names)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Column `j` of the regressor matrix.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    pub fn x_col_major(&self) -> &[f64] {
        &self.x
    }

    pub fn x_at(&self, i: usize, j: usize) -> f64 {
        self.x[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.x_at(i, j)).collect()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Display name of coordinate `j` of the `2p`-wide coefficient vector.
    pub fn coordinate_name(&self, j: usize) -> String {
        let (block, k) = if j < self.p { ("beta", j) } else { ("delta", j - self.p) };
        match &self.feature_names {
            Some(names) => format!("{block}:{}", names[k]),
            None => format!("{block}:x{}", k + 1),
        }
    }
}

/// Which side of the threshold carries the `delta` shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorDirection {
    /// Regime indicator `1{q > tau}`.
    #[default]
    Greater,
    /// Regime indicator `1{q < tau}`.
    Less,
}

impl IndicatorDirection {
    #[inline]
    pub fn in_regime(self, q: f64, tau: f64) -> bool {
        match self {
            IndicatorDirection::Greater => q > tau,
            IndicatorDirection::Less => q < tau,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            IndicatorDirection::Greater => IndicatorDirection::Less,
            IndicatorDirection::Less => IndicatorDirection::Greater,
        }
    }
}

impl std::str::FromStr for IndicatorDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greater" | ">" => Ok(IndicatorDirection::Greater),
            "less" | "<" => Ok(IndicatorDirection::Less),
            other => Err(invalid(format!("unknown indicator direction `{other}`"))),
        }
    }
}

/// The augmented design `X(tau)` for one threshold value. Borrows the
/// regressors; only the regime mask is materialized.
#[derive(Debug, Clone)]
pub struct ThresholdDesign<'a> {
    data: &'a Dataset,
    tau: f64,
    direction: IndicatorDirection,
    mask: Vec<bool>,
    regime: Vec<usize>,
}

impl<'a> ThresholdDesign<'a> {
    pub fn new(data: &'a Dataset, tau: f64, direction: IndicatorDirection) -> Result<Self> {
        if !tau.is_finite() {
            return Err(invalid(format!("threshold must be finite, got {tau}")));
        }
        let mask: Vec<bool> = data.q.iter().map(|&q| direction.in_regime(q, tau)).collect();
        let regime = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        Ok(Self {
            data,
            tau,
            direction,
            mask,
            regime,
        })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn direction(&self) -> IndicatorDirection {
        self.direction
    }

    pub fn regime_mask(&self) -> &[bool] {
        &self.mask
    }

    /// Indices of observations inside the shifted regime, ascending.
    pub fn regime_indices(&self) -> &[usize] {
        &self.regime
    }

    pub fn n(&self) -> usize {
        self.data.n
    }

    pub fn p(&self) -> usize {
        self.data.p
    }

    /// Number of columns of the augmented design, `2p`.
    pub fn width(&self) -> usize {
        2 * self.data.p
    }

    /// Entry `(i, j)` of the augmented design.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let p = self.data.p;
        if j < p {
            self.data.x_at(i, j)
        } else if self.mask[i] {
            self.data.x_at(i, j - p)
        } else {
            0.0
        }
    }

    /// Materializes column `j` of the augmented design.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let p = self.data.p;
        if j < p {
            self.data.column(j).to_vec()
        } else {
            let col = self.data.column(j - p);
            col.iter()
                .zip(&self.mask)
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect()
        }
    }

    /// `X(tau) alpha` for a flat `2p` coefficient vector.
    pub fn predict(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.predict_into(alpha, &mut out);
        out
    }

    pub fn predict_into(&self, alpha: &[f64], out: &mut [f64]) {
        let p = self.data.p;
        debug_assert_eq!(alpha.len(), 2 * p);
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..p {
            let b = alpha[j];
            if b != 0.0 {
                for (o, &x) in out.iter_mut().zip(self.data.column(j)) {
                    *o += b * x;
                }
            }
        }
        for j in 0..p {
            let d = alpha[p + j];
            if d != 0.0 {
                let col = self.data.column(j);
                for &i in &self.regime {
                    out[i] += d * col[i];
                }
            }
        }
    }

    /// Inner product of augmented column `j` with `v`.
    #[inline]
    pub fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        let p = self.data.p;
        if j < p {
            self.data.column(j).iter().zip(v).map(|(a, b)| a * b).sum()
        } else {
            let col = self.data.column(j - p);
            self.regime.iter().map(|&i| col[i] * v[i]).sum()
        }
    }

    /// `X(tau)^T v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.width()).map(|j| self.col_dot(j, v)).collect()
    }

    /// `X(tau)^T X(tau) / n`, dense row-major `2p x 2p`.
    pub fn scaled_gram(&self) -> Vec<f64> {
        let p = self.data.p;
        let w = 2 * p;
        let n = self.n() as f64;
        let mut g = vec![0.0; w * w];
        for a in 0..p {
            let ca = self.data.column(a);
            for b in a..p {
                let cb = self.data.column(b);
                let full: f64 = ca.iter().zip(cb).map(|(u, v)| u * v).sum();
                let part: f64 = self.regime.iter().map(|&i| ca[i] * cb[i]).sum();
                let (full, part) = (full / n, part / n);
                g[a * w + b] = full;
                g[b * w + a] = full;
                // beta-delta, delta-beta and delta-delta blocks share the regime sum
                g[a * w + (p + b)] = part;
                g[(p + b) * w + a] = part;
                g[b * w + (p + a)] = part;
                g[(p + a) * w + b] = part;
                g[(p + a) * w + (p + b)] = part;
                g[(p + b) * w + (p + a)] = part;
            }
        }
        g
    }
}

/// Builds the augmented design for a given threshold.
pub fn build_threshold_design(
    data: &Dataset,
    tau: f64,
    direction: IndicatorDirection,
) -> Result<ThresholdDesign<'_>> {
    ThresholdDesign::new(data, tau, direction)
}

/// Coefficients `alpha = (beta, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPair {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl CoefficientPair {
    pub fn new(beta: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        if beta.len() != delta.len() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, delta has {}",
                beta.len(),
                delta.len()
            )));
        }
        Ok(Self { beta, delta })
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            beta: vec![0.0; p],
            delta: vec![0.0; p],
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// `beta + delta`: the coefficients inside the shifted regime.
    pub fn theta(&self) -> Vec<f64> {
        self.beta.iter().zip(&self.delta).map(|(b, d)| b + d).collect()
    }

    pub fn as_alpha(&self) -> Vec<f64> {
        let mut a = Vec::with_capacity(2 * self.p());
        a.extend_from_slice(&self.beta);
        a.extend_from_slice(&self.delta);
        a
    }

    pub fn from_alpha(alpha: &[f64]) -> Result<Self> {
        if !alpha.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!(
                "alpha has odd length {}",
                alpha.len()
            )));
        }
        let p = alpha.len() / 2;
        Ok(Self {
            beta: alpha[..p].to_vec(),
            delta: alpha[p..].to_vec(),
        })
    }

    /// Re-expresses the coefficients under the opposite indicator direction.
    /// Away from ties `x'b + 1{q<t}x'd == x'(b+d) - 1{q>t}x'd`, and the map is
    /// its own inverse.
    pub fn flip_direction(&self) -> Self {
        Self {
            beta: self.theta(),
            delta: self.delta.iter().map(|d| -d).collect(),
        }
    }

    pub fn l1_distance(&self, other: &CoefficientPair) -> f64 {
        self.as_alpha()
            .iter()
            .zip(other.as_alpha())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// `x_i' beta + x_i' delta * regime_i` for every observation.
pub fn linear_predictor(design: &ThresholdDesign<'_>, alpha: &CoefficientPair) -> Result<Vec<f64>> {
    if alpha.p() != design.p() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have p = {}, design has p = {}",
            alpha.p(),
            design.p()
        )));
    }
    Ok(design.predict(&alpha.as_alpha()))
}

/// Indices (0-based, into the `2p` layout) of entries with `|v_j| > tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
    tolerance: f64,
}

impl ActiveSet {
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self {
            indices,
            tolerance: 0.0,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &ActiveSet) -> bool {
        self.indices.iter().all(|&j| other.contains(j))
    }

    /// Splits a `2p`-layout set into counts on the beta and delta blocks.
    pub fn split_counts(&self, p: usize) -> (usize, usize) {
        let nb = self.indices.iter().filter(|&&j| j < p).count();
        (nb, self.indices.len() - nb)
    }
}

pub fn active_set(v: &[f64], tol: f64) -> Result<ActiveSet> {
    if !(tol >= 0.0) {
        return Err(invalid(format!("active-set tolerance must be >= 0, got {tol}")));
    }
    let indices = v
        .iter()
        .enumerate()
        .filter_map(|(j, x)| (x.abs() > tol).then_some(j))
        .collect();
    Ok(ActiveSet {
        indices,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_point() -> Dataset {
        Dataset::from_rows(
            vec![0.0; 4],
            &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![0.1, 0.2, 0.8, 0.9],
        )
        .unwrap()
    }

    #[test]
    fn masks_follow_direction() {
        let d = four_point();
        let g = build_threshold_design(&d, 0.5, IndicatorDirection::Greater).unwrap();
        assert_eq!(g.regime_mask(), &[false, false, true, true]);
        let l = build_threshold_design(&d, 0.5, IndicatorDirection::Less).unwrap();
        assert_eq!(l.regime_mask(), &[true, true, false, false]);
        let low = build_threshold_design(&d, 0.0, IndicatorDirection::Greater).unwrap();
        assert!(low.regime_mask().iter().all(|&m| m));
    }

    #[test]
    fn ties_fall_outside_both_regimes() {
        let d = four_point();
        let g = build_threshold_design(&d, 0.2, IndicatorDirection::Greater).unwrap();
        let l = build_threshold_design(&d, 0.2, IndicatorDirection::Less).unwrap();
        assert!(!g.regime_mask()[1] && !l.regime_mask()[1]);
    }

    #[test]
    fn non_finite_tau_rejected() {
        let d = four_point();
        assert!(build_threshold_design(&d, f64::NAN, IndicatorDirection::Greater).is_err());
        assert!(build_threshold_design(&d, f64::INFINITY, IndicatorDirection::Less).is_err());
    }

    #[test]
    fn non_finite_data_rejected() {
        let r = Dataset::from_rows(vec![f64::NAN], &[vec![1.0]], vec![0.0]);
        assert!(r.is_err());
        assert!(Dataset::from_rows(vec![], &[], vec![]).is_err());
    }

    #[test]
    fn predictor_hand_arithmetic() {
        let d = Dataset::from_rows(vec![0.0], &[vec![1.0, 2.0]], vec![1.0]).unwrap();
        let des = build_threshold_design(&d, 0.0, IndicatorDirection::Greater).unwrap();
        let a = CoefficientPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(linear_predictor(&des, &a).unwrap(), vec![3.0]);
        let bad = CoefficientPair::zeros(3);
        assert!(linear_predictor(&des, &bad).is_err());
    }

    #[test]
    fn zero_delta_ignores_tau() {
        let d = four_point();
        let a = CoefficientPair::new(vec![2.0], vec![0.0]).unwrap();
        for tau in [0.0, 0.15, 0.5, 1.0] {
            let des = build_threshold_design(&d, tau, IndicatorDirection::Greater).unwrap();
            assert_eq!(linear_predictor(&des, &a).unwrap(), vec![2.0, 4.0, 6.0, 8.0]);
        }
    }

    #[test]
    fn active_set_examples() {
        let s = active_set(&[0.0, 0.5, 0.0, -1e-12], 1e-8).unwrap();
        assert_eq!(s.indices(), &[1]);
        assert!(active_set(&[0.0; 5], 1e-8).unwrap().is_empty());
        assert_eq!(active_set(&[1.0, -1.0], 0.0).unwrap().indices(), &[0, 1]);
        assert!(active_set(&[1.0], -1.0).is_err());
    }

    #[test]
    fn gram_matches_columns() {
        let d = Dataset::from_rows(
            vec![0.0; 3],
            &[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 1.0]],
            vec![0.1, 0.6, 0.9],
        )
        .unwrap();
        let des = build_threshold_design(&d, 0.5, IndicatorDirection::Greater).unwrap();
        let g = des.scaled_gram();
        for a in 0..4 {
            for b in 0..4 {
                let ca = des.column(a);
                let cb = des.column(b);
                let direct: f64 = ca.iter().zip(&cb).map(|(u, v)| u * v).sum::<f64>() / 3.0;
                assert!((g[a * 4 + b] - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn csv_loading() {
        let text = "y,x1,q,x2\n1.0,2.0,0.3,4.0\n2.0,3.0,0.7,5.0\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);
        assert_eq!(d.q(), &[0.3, 0.7]);
        assert_eq!(d.column(1), &[4.0, 5.0]);
        assert_eq!(d.coordinate_name(3), "delta:x2");

        let missing = "y,x1\n1,2\n";
        let err = Dataset::from_csv_reader(missing.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("`q`"));
    }
}
