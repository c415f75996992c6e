//! Monotone accelerated proximal gradient (MFISTA) with backtracking for the
//! logistic loss, followed by a Newton polish on the detected support.

use nalgebra::{DMatrix, DVector};

use super::{soft_threshold, Problem, SolveResult, SolverOptions};
use crate::error::{Error, Result};
use crate::loss::{mean_loss, sigmoid};

struct Smooth<'p, 'd, 'a> {
    problem: &'p Problem<'d, 'a>,
    pred: Vec<f64>,
    resid: Vec<f64>,
}

impl<'p, 'd, 'a> Smooth<'p, 'd, 'a> {
    fn new(problem: &'p Problem<'d, 'a>) -> Self {
        let n = problem.design.n();
        Self {
            problem,
            pred: vec![0.0; n],
            resid: vec![0.0; n],
        }
    }

    /// Loss value at `alpha`.
    fn value(&mut self, alpha: &[f64]) -> f64 {
        self.problem.design.predict_into(alpha, &mut self.pred);
        mean_loss(&self.problem.spec, self.problem.y(), &self.pred)
    }

    /// Loss value and gradient at `alpha`.
    fn value_grad(&mut self, alpha: &[f64], grad: &mut [f64]) -> f64 {
        let f = self.value(alpha);
        let y = self.problem.y();
        for i in 0..self.pred.len() {
            self.resid[i] = sigmoid(self.pred[i]) - y[i];
        }
        let n = self.pred.len() as f64;
        for (j, g) in grad.iter_mut().enumerate() {
            *g = if self.problem.locked[j] {
                0.0
            } else {
                self.problem.design.col_dot(j, &self.resid) / n
            };
        }
        f
    }
}

/// Largest eigenvalue of `X'X/n` by power iteration.
fn gram_spectral_norm(problem: &Problem<'_, '_>, iters: usize) -> f64 {
    let design = problem.design;
    let w = problem.width();
    let n = design.n() as f64;
    let mut v: Vec<f64> = (0..w).map(|j| if problem.locked[j] { 0.0 } else { 1.0 }).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|a| *a /= nv);
        let xv = design.predict(&v);
        let mut next = design.transpose_mul(&xv);
        for (j, a) in next.iter_mut().enumerate() {
            if problem.locked[j] {
                *a = 0.0;
            }
            *a /= n;
        }
        est = next.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        v = next;
    }
    est
}

/// KKT violation accepted at a stall when the Newton polish fails.
const STALL_KKT: f64 = 1e-6;

pub(super) fn solve(problem: &Problem<'_, '_>, alpha: Vec<f64>, opts: &SolverOptions) -> Result<SolveResult> {
    let w = problem.width();
    let mut smooth = Smooth::new(problem);

    // logistic curvature is at most 1/4
    let mut lip = (gram_spectral_norm(problem, 30) / 4.0).max(1e-12);

    let mut x = alpha;
    let mut x_prev = x.clone();
    let mut f_x = smooth.value(&x) + problem.penalty(&x);
    if !f_x.is_finite() {
        return Err(Error::NumericalFailure("non-finite starting objective".into()));
    }
    if let Some((cand, obj, true)) = newton_polish(problem, &x, opts.kkt_tol) {
        if obj <= f_x {
            return Ok(result(cand, obj, 0, true, true, vec![obj]));
        }
    }

    let mut trace = vec![f_x];
    let mut yk = x.clone();
    let mut z = vec![0.0; w];
    let mut grad = vec![0.0; w];
    let mut t = 1.0f64;

    for iter in 1..=opts.max_iter {
        let f_y = smooth.value_grad(&yk, &mut grad);
        let (f_z_smooth, f_z) = loop {
            for j in 0..w {
                z[j] = if problem.locked[j] {
                    0.0
                } else {
                    soft_threshold(yk[j] - grad[j] / lip, problem.pen[j] / lip)
                };
            }
            let fz = smooth.value(&z);
            let mut quad = f_y;
            for j in 0..w {
                let d = z[j] - yk[j];
                quad += grad[j] * d + 0.5 * lip * d * d;
            }
            if fz <= quad + 1e-12 * quad.abs().max(1.0) || lip > 1e12 {
                break (fz, fz + problem.penalty(&z));
            }
            lip *= 2.0;
        };
        if !f_z_smooth.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "proximal gradient produced a non-finite objective at tau = {}",
                problem.design.tau()
            )));
        }

        std::mem::swap(&mut x_prev, &mut x);
        let improved = f_z <= f_x;
        let rel_change = (f_x - f_z) / f_x.abs().max(1.0);
        if improved {
            x.copy_from_slice(&z);
            f_x = f_z;
        } else {
            x.copy_from_slice(&x_prev);
        }
        if improved {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            for j in 0..w {
                yk[j] = x[j] + ((t - 1.0) / t_next) * (x[j] - x_prev[j]);
            }
            t = t_next;
        } else {
            // momentum overshot: restart from the current point
            yk.copy_from_slice(&x);
            t = 1.0;
        }
        trace.push(f_x);

        let stalled = improved && rel_change < opts.fista_tol;
        if stalled || iter % (5 * opts.polish_every) == 0 {
            if let Some((cand, obj, certified)) = newton_polish(problem, &x, opts.kkt_tol) {
                if certified && obj <= f_x + 1e-12 * f_x.abs().max(1.0) {
                    let obj = obj.min(f_x);
                    trace.push(obj);
                    return Ok(result(cand, obj, iter, true, true, trace));
                }
            }
        }
        // a small step can also come from a poorly conditioned stretch; only
        // stop once the point is close to stationary
        if stalled && problem.kkt_violation(&x, 0.0) <= STALL_KKT {
            return Ok(result(x, f_x, iter, true, false, trace));
        }
        if stalled {
            yk.copy_from_slice(&x);
            t = 1.0;
        }
    }
    Ok(result(x, f_x, opts.max_iter, false, false, trace))
}

fn result(
    alpha: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    certified: bool,
    objective_trace: Vec<f64>,
) -> SolveResult {
    SolveResult {
        alpha,
        objective,
        iterations,
        converged,
        kkt_violation: f64::NAN,
        certified,
        objective_trace,
        dual: Vec::new(),
    }
}

/// Newton's method for the smooth problem obtained by fixing the signs of the
/// current support; returns `(alpha, objective, certified)`.
fn newton_polish(problem: &Problem<'_, '_>, alpha: &[f64], tol: f64) -> Option<(Vec<f64>, f64, bool)> {
    let design = problem.design;
    let n = design.n();
    let nf = n as f64;
    let y = problem.y();
    let active: Vec<usize> = (0..problem.width())
        .filter(|&j| !problem.locked[j] && alpha[j] != 0.0)
        .collect();
    let k = active.len();
    let signs: Vec<f64> = active.iter().map(|&j| alpha[j].signum()).collect();
    let cols: Vec<Vec<f64>> = active.iter().map(|&j| design.column(j)).collect();

    let mut cur = alpha.to_vec();
    let objective = |a: &[f64]| problem.objective(a);
    let mut f_cur = objective(&cur);

    let mut pred = design.predict(&cur);
    for _ in 0..40 {
        if k == 0 {
            break;
        }
        let mu: Vec<f64> = pred.iter().map(|&t| sigmoid(t)).collect();
        let g = DVector::from_iterator(
            k,
            (0..k).map(|a| {
                let s: f64 = cols[a].iter().zip(&mu).zip(y).map(|((x, m), yi)| x * (m - yi)).sum();
                s / nf + problem.pen[active[a]] * signs[a]
            }),
        );
        if g.amax() <= 1e-13 {
            break;
        }
        let wts: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let mut h = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let s: f64 = cols[a]
                    .iter()
                    .zip(&cols[b])
                    .zip(&wts)
                    .map(|((u, v), wt)| u * v * wt)
                    .sum::<f64>()
                    / nf;
                h[(a, b)] = s;
                h[(b, a)] = s;
            }
        }
        let step = h.cholesky()?.solve(&g);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = cur.clone();
            for (a, &j) in active.iter().enumerate() {
                trial[j] = cur[j] - scale * step[a];
            }
            // leaving the sign orthant invalidates the smooth model
            let keeps_signs = active.iter().zip(&signs).all(|(&j, &s)| trial[j] * s > 0.0);
            if keeps_signs {
                let f_trial = objective(&trial);
                if f_trial <= f_cur - 1e-4 * scale * g.dot(&step) || (f_trial <= f_cur && scale < 1e-6) {
                    cur = trial;
                    f_cur = f_trial;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        design.predict_into(&cur, &mut pred);
    }

    if !f_cur.is_finite() {
        return None;
    }
    let mut violation: f64 = 0.0;
    // stationarity on the support after the final step, and the penalty band
    // off the support
    let resid: Vec<f64> = pred.iter().zip(y).map(|(&t, &yi)| sigmoid(t) - yi).collect();
    for j in 0..problem.width() {
        if problem.locked[j] {
            continue;
        }
        let g = design.col_dot(j, &resid) / nf;
        let v = if cur[j] != 0.0 {
            (g + problem.pen[j] * cur[j].signum()).abs()
        } else {
            (g.abs() - problem.pen[j]).max(0.0)
        };
        violation = violation.max(v);
    }
    Some((cur, f_cur, violation <= tol))
}
