//! Scaled-form ADMM for the check loss.
//!
//! Splitting `z = X alpha`, with the augmented term scaled by `1/n`:
//!
//! ```text
//! alpha <- argmin (rho/2n) |X alpha - z + u|^2 + sum_j pen_j |alpha_j|   (coordinate descent)
//! z_i   <- prox_{rho(y_i, .)/rho}(x_i' alpha + u_i)
//! u     <- u + X alpha - z
//! ```
//!
//! The problem is a linear program, so its solutions sit on vertices where as
//! many residuals vanish as there are nonzero coefficients. Every
//! `polish_every` iterations the current support is snapped to that vertex and
//! accepted if it passes an exact subgradient certificate.

use nalgebra::{DMatrix, DVector};

use super::{soft_threshold, Problem, SolveResult, SolverOptions};
use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(super) fn solve(
    problem: &Problem<'_, '_>,
    mut alpha: Vec<f64>,
    dual: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let design = problem.design;
    let n = design.n();
    let nf = n as f64;
    let w = problem.width();
    let y = problem.y();
    let gram = design.scaled_gram();
    let free: Vec<usize> = (0..w).filter(|&j| !problem.locked[j] && gram[j * w + j] > 0.0).collect();
    for j in 0..w {
        if !free.contains(&j) {
            alpha[j] = 0.0;
        }
    }

    let mut best_polish: Option<Vertex> = None;
    if let Some(v) = best_vertex(problem, &alpha, &free, dual, opts.kkt_tol) {
        if v.certified {
            return Ok(v.into_result(0, true));
        }
    }

    let mut rho = opts.admm_rho;
    let mut xa = design.predict(&alpha);
    let mut z = xa.clone();
    let mut z_old = vec![0.0; n];
    let mut u = match dual {
        Some(h) => h.iter().map(|a| a / rho).collect(),
        None => vec![0.0; n],
    };
    let mut v = vec![0.0; n];
    let mut grad = vec![0.0; w];

    for iter in 1..=opts.max_iter {
        // coefficient update: weighted lasso on the quadratic with Gram matrix
        for i in 0..n {
            v[i] = z[i] - u[i];
        }
        for j in 0..w {
            grad[j] = -design.col_dot(j, &v) / nf;
        }
        for (k, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let row = &gram[k * w..(k + 1) * w];
                for (g, &gk) in grad.iter_mut().zip(row) {
                    *g += a * gk;
                }
            }
        }
        for _ in 0..opts.inner_sweeps {
            let mut max_change: f64 = 0.0;
            for &j in &free {
                let gjj = gram[j * w + j];
                let old = alpha[j];
                let c = gjj * old - grad[j];
                let new = soft_threshold(c, problem.pen[j] / rho) / gjj;
                if new != old {
                    let delta = new - old;
                    let row = &gram[j * w..(j + 1) * w];
                    for (g, &gk) in grad.iter_mut().zip(row) {
                        *g += delta * gk;
                    }
                    alpha[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < 1e-14 {
                break;
            }
        }

        design.predict_into(&alpha, &mut xa);
        std::mem::swap(&mut z, &mut z_old);
        let c = 1.0 / rho;
        for i in 0..n {
            z[i] = problem.spec.prox(y[i], xa[i] + u[i], c);
            u[i] += xa[i] - z[i];
        }
        if u.iter().any(|a| !a.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "ADMM diverged at tau = {} (iteration {iter})",
                design.tau()
            )));
        }

        if iter % opts.polish_every != 0 && iter != opts.max_iter {
            continue;
        }

        let subgrad: Vec<f64> = u.iter().map(|a| rho * a).collect();
        if let Some(vx) = best_vertex(problem, &alpha, &free, Some(&subgrad), opts.kkt_tol) {
            if vx.certified {
                return Ok(vx.into_result(iter, true));
            }
            if best_polish.as_ref().is_none_or(|b| vx.objective < b.objective) {
                best_polish = Some(vx);
            }
        }

        let r: Vec<f64> = xa.iter().zip(&z).map(|(a, b)| a - b).collect();
        let dz: Vec<f64> = z.iter().zip(&z_old).map(|(a, b)| a - b).collect();
        let r_norm = norm(&r);
        let s_norm = rho / nf * norm(&design.transpose_mul(&dz));
        let eps_pri = nf.sqrt() * opts.tol_primal + opts.tol_primal * norm(&xa).max(norm(&z));
        let eps_dual = (w as f64).sqrt() * opts.tol_dual + opts.tol_dual * rho / nf * norm(&design.transpose_mul(&u));

        if r_norm <= eps_pri && s_norm <= eps_dual {
            let objective = problem.objective_with_pred(&alpha, &xa);
            if let Some(b) = best_polish.take() {
                if b.objective <= objective + 1e-12 * objective.abs().max(1.0) {
                    return Ok(b.into_result(iter, true));
                }
            }
            return Ok(SolveResult {
                alpha,
                objective,
                iterations: iter,
                converged: true,
                kkt_violation: f64::NAN,
                certified: false,
                objective_trace: Vec::new(),
                dual: subgrad,
            });
        }

        if opts.adaptive_rho {
            let rp = r_norm / eps_pri;
            let sd = s_norm / eps_dual;
            if rp > 10.0 * sd {
                rho *= 2.0;
                u.iter_mut().for_each(|a| *a *= 0.5);
            } else if sd > 10.0 * rp {
                rho *= 0.5;
                u.iter_mut().for_each(|a| *a *= 2.0);
            }
        }
    }

    let objective = problem.objective_with_pred(&alpha, &xa);
    if let Some(b) = best_polish {
        if b.objective <= objective {
            return Ok(b.into_result(opts.max_iter, false));
        }
    }
    Ok(SolveResult {
        alpha,
        objective,
        iterations: opts.max_iter,
        converged: false,
        kkt_violation: f64::NAN,
        certified: false,
        objective_trace: Vec::new(),
        dual: u.iter().map(|a| rho * a).collect(),
    })
}

struct Vertex {
    alpha: Vec<f64>,
    objective: f64,
    certified: bool,
    violation: f64,
    subgrad: Vec<f64>,
}

/// Polishes with both observation rankings and keeps the smaller violation.
fn best_vertex(
    problem: &Problem<'_, '_>,
    alpha: &[f64],
    free: &[usize],
    subgrad: Option<&[f64]>,
    tol: f64,
) -> Option<Vertex> {
    let first = subgrad.and_then(|h| vertex_polish(problem, alpha, free, Some(h), tol));
    if first.as_ref().is_some_and(|v| v.certified) {
        return first;
    }
    let second = vertex_polish(problem, alpha, free, None, tol);
    match (first, second) {
        (Some(a), Some(b)) => Some(if b.violation < a.violation { b } else { a }),
        (a, b) => a.or(b),
    }
}

impl Vertex {
    fn into_result(self, iterations: usize, converged: bool) -> SolveResult {
        SolveResult {
            alpha: self.alpha,
            objective: self.objective,
            iterations,
            converged: converged || self.certified,
            kkt_violation: f64::NAN,
            certified: self.certified,
            objective_trace: Vec::new(),
            dual: self.subgrad,
        }
    }
}

/// Snaps the support of `alpha` onto the interpolating vertex and checks the
/// exact optimality conditions there.
///
/// With active set `A` (size k) and the k observations `Z` of smallest
/// residual, the vertex solves `X_{Z,A} a = y_Z`. It is optimal iff some
/// subgradient `s_Z` in `[-gamma, 1-gamma]^k` makes every active coordinate
/// stationary and keeps every inactive one inside its penalty band.
fn vertex_polish(
    problem: &Problem<'_, '_>,
    alpha: &[f64],
    free: &[usize],
    subgrad: Option<&[f64]>,
    tol: f64,
) -> Option<Vertex> {
    let design = problem.design;
    let n = design.n();
    let nf = n as f64;
    let y = problem.y();
    let gamma = problem.spec.gamma;
    let active: Vec<usize> = free.iter().copied().filter(|&j| alpha[j] != 0.0).collect();
    let k = active.len();
    if k > n {
        return None;
    }

    // rank observations by how likely they are to sit on the kink: the
    // scaled dual estimates the loss subgradient, interior values mark zero
    // residuals; without it, use the residual size
    let score: Vec<f64> = match subgrad {
        Some(h) => h.iter().map(|&v| -(v + gamma).min(1.0 - gamma - v)).collect(),
        None => {
            let pred = design.predict(alpha);
            (0..n).map(|i| (y[i] - pred[i]).abs()).collect()
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let zero_set: Vec<usize> = order[..k].to_vec();
    let mut in_zero = vec![false; n];
    zero_set.iter().for_each(|&i| in_zero[i] = true);

    let mut candidate = vec![0.0; alpha.len()];
    if k > 0 {
        let m = DMatrix::from_fn(k, k, |a, b| design.entry(zero_set[a], active[b]));
        let rhs = DVector::from_iterator(k, zero_set.iter().map(|&i| y[i]));
        let sol = m.lu().solve(&rhs)?;
        for (b, &j) in active.iter().enumerate() {
            if !sol[b].is_finite() || sol[b] == 0.0 {
                return None;
            }
            candidate[j] = sol[b];
        }
    }

    let cand_pred = design.predict(&candidate);
    let h: Vec<f64> = (0..n)
        .map(|i| {
            if in_zero[i] {
                0.0
            } else {
                problem.spec.derivative(y[i], cand_pred[i])
            }
        })
        .collect();
    let gfix: Vec<f64> = (0..problem.width()).map(|j| design.col_dot(j, &h) / nf).collect();

    let mut violation: f64 = 0.0;
    let mut s = DVector::zeros(k);
    if k > 0 {
        let mt = DMatrix::from_fn(k, k, |a, b| design.entry(zero_set[b], active[a]));
        let rhs = DVector::from_iterator(
            k,
            active
                .iter()
                .map(|&j| -nf * (gfix[j] + problem.pen[j] * candidate[j].signum())),
        );
        s = mt.lu().solve(&rhs)?;
        for &sv in s.iter() {
            violation = violation.max(-gamma - sv).max(sv - (1.0 - gamma));
        }
    }
    for &j in free {
        if candidate[j] != 0.0 {
            continue;
        }
        let extra: f64 = zero_set
            .iter()
            .enumerate()
            .map(|(a, &i)| design.entry(i, j) * s[a])
            .sum::<f64>()
            / nf;
        violation = violation.max((gfix[j] + extra).abs() - problem.pen[j]);
    }

    let mut subgrad = h;
    for (a, &i) in zero_set.iter().enumerate() {
        subgrad[i] = s[a].clamp(-gamma, 1.0 - gamma);
    }
    let objective = problem.objective_with_pred(&candidate, &cand_pred);
    Some(Vertex {
        alpha: candidate,
        objective,
        certified: violation <= tol,
        violation,
        subgrad,
    })
}
