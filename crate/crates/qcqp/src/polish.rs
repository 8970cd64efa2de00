//! Active-set Newton refinement of an interior-point solution.
//!
//! Multipliers of quadratic constraints recovered from second-order cone
//! duals are only as accurate as the square root of the duality gap. Once
//! the interior-point iterates have settled, the active constraints are
//! treated as equalities and a few Newton steps are taken on
//!
//! ```text
//! Qx + c + Σ νₖ ∇cₖ(x) = 0,    cₖ(x) = 0  (k active)
//! ```
//!
//! which converges quadratically near a nondegenerate solution.

use crate::kkt::{verify_kkt, Duals, KktResiduals};
use crate::ldl::SparseLdl;
use crate::problem::QcqpProblem;

#[derive(Debug, Clone, Copy)]
enum Active {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

const REG: f64 = 1e-11;

/// Returns an improved `(x, duals, residuals)` or `None` if the Newton
/// steps do not reduce the worst KKT residual.
pub(crate) fn polish(
    problem: &QcqpProblem,
    x: &[f64],
    duals: &Duals,
    steps: usize,
) -> Option<(Vec<f64>, Duals, KktResiduals)> {
    let n = problem.n;
    let mut active = Vec::new();
    for k in 0..problem.eq.len() {
        active.push(Active::Eq(k));
    }
    for (k, c) in problem.quad_ineq.iter().enumerate() {
        if -c.value(x) < duals.ineq[k] {
            active.push(Active::Ineq(k));
        }
    }
    for i in 0..n {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        if lo == hi {
            // A fixed variable keeps a single signed multiplier.
            active.push(Active::Upper(i));
        } else {
            if lo.is_finite() && x[i] - lo < duals.lower[i] {
                active.push(Active::Lower(i));
            }
            if hi.is_finite() && hi - x[i] < duals.upper[i] {
                active.push(Active::Upper(i));
            }
        }
    }
    let m = active.len();
    let mut nu: Vec<f64> = active
        .iter()
        .map(|a| match *a {
            Active::Eq(k) => duals.eq[k],
            Active::Ineq(k) => duals.ineq[k],
            Active::Lower(i) => duals.lower[i],
            Active::Upper(i) if problem.lower[i] == problem.upper[i] => duals.upper[i] - duals.lower[i],
            Active::Upper(i) => duals.upper[i],
        })
        .collect();

    let start_res = verify_kkt(problem, x, duals);
    let mut best: Option<(Vec<f64>, Duals, KktResiduals)> = None;
    let mut best_score = start_res.max();
    let mut x = x.to_vec();

    // Pattern: Q and every active P in the x block, one column per active
    // constraint, diagonals everywhere.
    let mut positions: Vec<(usize, usize)> = Vec::new();
    for (i, j, _) in problem.objective.q.compressed() {
        positions.push((i, j));
    }
    for a in &active {
        if let Active::Ineq(k) = *a {
            for (i, j, _) in problem.quad_ineq[k].p.compressed() {
                positions.push((i, j));
            }
        }
    }
    let h_len = positions.len();
    for i in 0..n + m {
        positions.push((i, i));
    }
    let grad_support: Vec<Vec<usize>> = active
        .iter()
        .map(|a| match *a {
            Active::Eq(k) => problem.eq[k].a.compressed().iter().map(|e| e.0).collect(),
            Active::Ineq(k) => {
                let c = &problem.quad_ineq[k];
                let mut s: Vec<usize> = c.p.support();
                s.extend(c.q.compressed().iter().map(|e| e.0));
                s.sort_unstable();
                s.dedup();
                s
            }
            Active::Lower(i) | Active::Upper(i) => vec![i],
        })
        .collect();
    for (r, sup) in grad_support.iter().enumerate() {
        for &i in sup {
            positions.push((i, n + r));
        }
    }
    let signs: Vec<f64> = (0..n + m).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
    let mut ldl = SparseLdl::new(n + m, &positions, &signs);

    for _ in 0..steps {
        // Gradients and values of active constraints at x.
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut values = Vec::with_capacity(m);
        for a in &active {
            let mut g = vec![0.0; n];
            let v = match *a {
                Active::Eq(k) => {
                    problem.eq[k].a.axpy_into(1.0, &mut g);
                    problem.eq[k].residual(&x)
                }
                Active::Ineq(k) => {
                    problem.quad_ineq[k].gradient_axpy(&x, 1.0, &mut g);
                    problem.quad_ineq[k].value(&x)
                }
                Active::Lower(i) => {
                    g[i] = -1.0;
                    problem.lower[i] - x[i]
                }
                Active::Upper(i) => {
                    g[i] = 1.0;
                    x[i] - problem.upper[i]
                }
            };
            grads.push(g);
            values.push(v);
        }
        let mut lag = problem.objective.q.mul(&x, n);
        for i in 0..n {
            lag[i] += problem.objective.c[i];
        }
        for (g, v) in grads.iter().zip(&nu) {
            for i in 0..n {
                lag[i] += v * g[i];
            }
        }

        let mut vals = Vec::with_capacity(positions.len());
        for (_, _, v) in problem.objective.q.compressed() {
            vals.push(v);
        }
        for (r, a) in active.iter().enumerate() {
            if let Active::Ineq(k) = *a {
                for (_, _, v) in problem.quad_ineq[k].p.compressed() {
                    vals.push(nu[r] * v);
                }
            }
        }
        debug_assert_eq!(vals.len(), h_len);
        for i in 0..n + m {
            vals.push(if i < n { REG } else { -REG });
        }
        for (r, sup) in grad_support.iter().enumerate() {
            for &i in sup {
                vals.push(grads[r][i]);
            }
        }
        ldl.factor(&vals);

        let mut rhs: Vec<f64> = lag.iter().map(|v| -v).collect();
        rhs.extend(values.iter().map(|v| -v));
        let mut sol = rhs.clone();
        ldl.solve_in_place(&mut sol);
        // Refinement against the unregularized matrix.
        for _ in 0..4 {
            let kx = mul(&positions, &vals, h_len, n, m, &sol);
            let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            ldl.solve_in_place(&mut r);
            for (s, d) in sol.iter_mut().zip(&r) {
                *s += d;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            break;
        }
        for i in 0..n {
            x[i] += sol[i];
        }
        for r in 0..m {
            nu[r] += sol[n + r];
        }

        let mut d = Duals::zeros(problem);
        for (a, v) in active.iter().zip(&nu) {
            match *a {
                Active::Eq(k) => d.eq[k] = *v,
                Active::Ineq(k) => d.ineq[k] = *v,
                Active::Lower(i) => d.lower[i] = *v,
                Active::Upper(i) if problem.lower[i] == problem.upper[i] => {
                    d.upper[i] = v.max(0.0);
                    d.lower[i] = (-v).max(0.0);
                }
                Active::Upper(i) => d.upper[i] = *v,
            }
        }
        let res = verify_kkt(problem, &x, &d);
        if res.max() < best_score {
            best_score = res.max();
            best = Some((x.clone(), d, res));
        }
    }
    best
}

/// Product with the KKT matrix whose first `h_len` entries and the
/// following diagonal block carry regularization only on the diagonal.
fn mul(positions: &[(usize, usize)], vals: &[f64], h_len: usize, n: usize, m: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (t, (&(i, j), &a)) in positions.iter().zip(vals).enumerate() {
        // Skip the regularization diagonal.
        if t >= h_len && t < h_len + n + m {
            continue;
        }
        out[i] += a * v[j];
        if i != j {
            out[j] += a * v[i];
        }
    }
    out
}
