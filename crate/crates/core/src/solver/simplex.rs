//! Active-set simplex for the check loss.
//!
//! The penalized check-loss problem is a linear program. A basic point is a
//! pair `(A, Z)` of equal size: the nonzero coefficients `A` and the
//! observations `Z` with zero residual, with `X_{Z,A}` nonsingular. Each step
//! prices every move that leaves such a point (releasing an observation from
//! `Z` or adding a coefficient to `A`), takes the steepest one and walks along
//! the piecewise-linear objective until its slope turns nonnegative. The last
//! breakpoint crossed joins the basis. This is the Barrodale-Roberts scheme
//! extended with the weighted l1 penalty.

use nalgebra::{DMatrix, DVector};

use super::{Problem, SolveResult, SolverOptions};

/// Consecutive zero-length steps tolerated before giving up on degeneracy.
const MAX_DEGENERATE: usize = 50;

enum Move {
    Release { slot: usize, eps: f64 },
    Enter { coord: usize, sign: f64 },
}

enum Block {
    Obs(usize),
    Coord(usize),
}

/// Returns `None` when the basis becomes singular, the walk degenerates or
/// the iteration budget runs out; the caller then falls back to ADMM.
pub(super) fn solve(problem: &Problem<'_, '_>, init: &[f64], opts: &SolverOptions) -> Option<SolveResult> {
    let design = problem.design;
    let n = design.n();
    let nf = n as f64;
    let w = problem.width();
    let y = problem.y();
    let gamma = problem.spec.gamma;

    let cols: Vec<Vec<f64>> = (0..w).map(|j| design.column(j)).collect();
    let free: Vec<usize> = (0..w)
        .filter(|&j| !problem.locked[j] && cols[j].iter().any(|&v| v != 0.0))
        .collect();

    let (mut act, mut zs) = initial_basis(problem, init, &free, &cols);
    let mut degenerate = 0usize;
    let mut alpha = vec![0.0; w];
    let mut r = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut in_zero = vec![false; n];
    let mut in_act = vec![false; w];

    for iter in 0..opts.max_iter {
        let k = act.len();
        let b = DMatrix::from_fn(k, k, |a, c| cols[act[c]][zs[a]]);
        let lu = b.clone().lu();
        let lut = b.transpose().lu();
        let coef = if k > 0 {
            lu.solve(&DVector::from_iterator(k, zs.iter().map(|&i| y[i])))?
        } else {
            DVector::zeros(0)
        };
        if coef.iter().any(|v| !v.is_finite()) {
            return None;
        }

        alpha.iter_mut().for_each(|a| *a = 0.0);
        in_act.iter_mut().for_each(|a| *a = false);
        for (c, &j) in act.iter().enumerate() {
            alpha[j] = coef[c];
            in_act[j] = true;
        }
        r.copy_from_slice(y);
        for &j in &act {
            let a = alpha[j];
            for (ri, &x) in r.iter_mut().zip(&cols[j]) {
                *ri -= a * x;
            }
        }
        in_zero.iter_mut().for_each(|z| *z = false);
        for &i in &zs {
            r[i] = 0.0;
            in_zero[i] = true;
        }
        for i in 0..n {
            h[i] = if in_zero[i] {
                0.0
            } else if r[i] < 0.0 {
                1.0 - gamma
            } else {
                -gamma
            };
        }
        let g: Vec<f64> = (0..w)
            .map(|j| {
                if free.binary_search(&j).is_ok() {
                    cols[j].iter().zip(&h).map(|(x, hi)| x * hi).sum::<f64>() / nf
                } else {
                    0.0
                }
            })
            .collect();
        let signs: Vec<f64> = act.iter().map(|&j| if alpha[j] < 0.0 { -1.0 } else { 1.0 }).collect();
        let s = if k > 0 {
            let rhs = DVector::from_iterator(
                k,
                act.iter().zip(&signs).map(|(&j, &sg)| -nf * (g[j] + problem.pen[j] * sg)),
            );
            lut.solve(&rhs)?
        } else {
            DVector::zeros(0)
        };

        // price every move; rates are directional derivatives of the objective
        let mut best: Option<(f64, Move)> = None;
        let mut violation: f64 = 0.0;
        let mut consider = |rate: f64, mv: Move, viol: f64| {
            violation = violation.max(viol);
            if viol > opts.kkt_tol && best.as_ref().is_none_or(|(b, _)| rate < *b) {
                best = Some((rate, mv));
            }
        };
        for a in 0..k {
            let up = s[a] - (1.0 - gamma);
            let down = -gamma - s[a];
            if up > 0.0 {
                consider(-up / nf, Move::Release { slot: a, eps: 1.0 }, up);
            } else if down > 0.0 {
                consider(-down / nf, Move::Release { slot: a, eps: -1.0 }, down);
            }
        }
        for &j in &free {
            if in_act[j] {
                continue;
            }
            let extra: f64 = zs.iter().enumerate().map(|(a, &i)| cols[j][i] * s[a]).sum::<f64>() / nf;
            let grad = g[j] + extra;
            let viol = grad.abs() - problem.pen[j];
            let sign = if grad > 0.0 { -1.0 } else { 1.0 };
            consider(-viol, Move::Enter { coord: j, sign }, viol.max(0.0));
        }

        let Some((slope0, mv)) = best else {
            let mut dual = h.clone();
            for (a, &i) in zs.iter().enumerate() {
                dual[i] = s[a].clamp(-gamma, 1.0 - gamma);
            }
            let pred: Vec<f64> = y.iter().zip(&r).map(|(yi, ri)| yi - ri).collect();
            return Some(SolveResult {
                objective: problem.objective_with_pred(&alpha, &pred),
                alpha,
                iterations: iter,
                converged: true,
                kkt_violation: f64::NAN,
                certified: violation <= opts.kkt_tol,
                objective_trace: Vec::new(),
                dual,
            });
        };

        // direction in coefficient space and the induced residual changes
        let mut d = vec![0.0; w];
        let mut dr = vec![0.0; n];
        let released = match mv {
            Move::Release { slot, eps } => {
                let mut e = DVector::zeros(k);
                e[slot] = eps;
                let da = lu.solve(&e)?;
                for (c, &j) in act.iter().enumerate() {
                    d[j] = da[c];
                }
                Some(zs[slot])
            }
            Move::Enter { coord, sign } => {
                if k > 0 {
                    let rhs = DVector::from_iterator(k, zs.iter().map(|&i| -sign * cols[coord][i]));
                    let da = lu.solve(&rhs)?;
                    for (c, &j) in act.iter().enumerate() {
                        d[j] = da[c];
                    }
                }
                d[coord] = sign;
                None
            }
        };
        for (j, &dj) in d.iter().enumerate() {
            if dj != 0.0 {
                for (v, &x) in dr.iter_mut().zip(&cols[j]) {
                    *v -= dj * x;
                }
            }
        }

        let mut breaks: Vec<(f64, f64, Block)> = Vec::new();
        for i in 0..n {
            if in_zero[i] || Some(i) == released || dr[i] == 0.0 {
                continue;
            }
            // residuals at zero count as positive (see `h`)
            let toward = if r[i] < 0.0 { dr[i] > 0.0 } else { dr[i] < 0.0 };
            if toward {
                breaks.push(((-r[i] / dr[i]).max(0.0), dr[i].abs() / nf, Block::Obs(i)));
            }
        }
        for &j in &act {
            if d[j] != 0.0 && (alpha[j] * d[j] < 0.0 || alpha[j] == 0.0 && d[j] < 0.0) {
                breaks.push(((-alpha[j] / d[j]).max(0.0), 2.0 * problem.pen[j] * d[j].abs(), Block::Coord(j)));
            }
        }
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut slope = slope0;
        let mut stop = None;
        for (t, inc, blk) in breaks {
            slope += inc;
            if slope >= 0.0 {
                stop = Some((t, blk));
                break;
            }
        }
        // an unbounded ray cannot happen for a proper loss; treat it as failure
        let (t, blk) = stop?;
        if t == 0.0 {
            degenerate += 1;
            if degenerate > MAX_DEGENERATE {
                return None;
            }
        } else {
            degenerate = 0;
        }

        match mv {
            Move::Release { slot, .. } => {
                zs.remove(slot);
            }
            Move::Enter { coord, .. } => act.push(coord),
        }
        match blk {
            Block::Obs(i) => zs.push(i),
            Block::Coord(j) => act.retain(|&c| c != j),
        }
        if act.len() != zs.len() {
            return None;
        }
    }
    None
}

/// Starting basis from a warm start: its support, paired with the same number
/// of observations of smallest residual. Falls back to the empty basis when
/// that pairing is singular.
fn initial_basis(problem: &Problem<'_, '_>, init: &[f64], free: &[usize], cols: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    let y = problem.y();
    let n = y.len();
    let act: Vec<usize> = free.iter().copied().filter(|&j| init[j] != 0.0).collect();
    let k = act.len();
    if k == 0 || k > n {
        return (Vec::new(), Vec::new());
    }
    let mut r = y.to_vec();
    for &j in &act {
        for (ri, &x) in r.iter_mut().zip(&cols[j]) {
            *ri -= init[j] * x;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
    let zs: Vec<usize> = order[..k].to_vec();
    let b = DMatrix::from_fn(k, k, |a, c| cols[act[c]][zs[a]]);
    let sv = b.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(lo > 1e-10 * hi) {
        return (Vec::new(), Vec::new());
    }
    (act, zs)
}
