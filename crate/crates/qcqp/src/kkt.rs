//! Karush-Kuhn-Tucker residuals evaluated directly from problem data.
//!
//! Sign conventions for the Lagrangian:
//!
//! ```text
//! L = f(x) + Σ yᵢ (aᵢᵀx − bᵢ) + Σ μⱼ gⱼ(x) − λₗᵀ(x − lower) + λᵤᵀ(x − upper)
//! ```
//!
//! with `μ, λₗ, λᵤ ≥ 0`. Stationarity is normalized by `1 + ‖c‖∞`, each
//! primal row by `1 + |rhs|`, complementarity by `1 + |f(x)|`.

use crate::problem::QcqpProblem;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Duals {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Duals {
    pub fn zeros(problem: &QcqpProblem) -> Self {
        Self {
            eq: vec![0.0; problem.eq.len()],
            ineq: vec![0.0; problem.quad_ineq.len()],
            lower: vec![0.0; problem.n],
            upper: vec![0.0; problem.n],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feas: f64,
    pub dual_feas: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feas)
            .max(self.dual_feas)
            .max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Gradient of the Lagrangian at `(x, duals)`.
pub fn lagrangian_gradient(problem: &QcqpProblem, x: &[f64], duals: &Duals) -> Vec<f64> {
    let n = problem.n;
    let mut g = problem.objective.q.mul(x, n);
    for i in 0..n {
        g[i] += problem.objective.c[i] - duals.lower[i] + duals.upper[i];
    }
    for (e, y) in problem.eq.iter().zip(&duals.eq) {
        e.a.axpy_into(*y, &mut g);
    }
    for (c, mu) in problem.quad_ineq.iter().zip(&duals.ineq) {
        c.gradient_axpy(x, *mu, &mut g);
    }
    g
}

pub fn verify_kkt(problem: &QcqpProblem, x: &[f64], duals: &Duals) -> KktResiduals {
    assert_eq!(x.len(), problem.n, "solution has wrong dimension");
    assert_eq!(duals.eq.len(), problem.eq.len());
    assert_eq!(duals.ineq.len(), problem.quad_ineq.len());
    let c_scale = 1.0 + problem.objective.c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let f_scale = 1.0 + problem.objective_value(x).abs();

    let stationarity = lagrangian_gradient(problem, x, duals)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        / c_scale;

    let mut primal = 0.0_f64;
    let mut dual = 0.0_f64;
    let mut comp = 0.0_f64;
    for (e, y) in problem.eq.iter().zip(&duals.eq) {
        primal = primal.max(e.residual(x).abs() / (1.0 + e.b.abs()));
        if !y.is_finite() {
            dual = f64::INFINITY;
        }
    }
    for (c, mu) in problem.quad_ineq.iter().zip(&duals.ineq) {
        let g = c.value(x);
        primal = primal.max(g.max(0.0) / (1.0 + c.s.abs()));
        dual = dual.max(-mu);
        comp = comp.max((mu * g).abs());
    }
    for i in 0..problem.n {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        let (ll, lu) = (duals.lower[i], duals.upper[i]);
        dual = dual.max(-ll).max(-lu);
        if lo.is_finite() {
            primal = primal.max((lo - x[i]).max(0.0) / (1.0 + lo.abs()));
            comp = comp.max((ll * (x[i] - lo)).abs());
        } else {
            dual = dual.max(ll.abs());
        }
        if hi.is_finite() {
            primal = primal.max((x[i] - hi).max(0.0) / (1.0 + hi.abs()));
            comp = comp.max((lu * (hi - x[i])).abs());
        } else {
            dual = dual.max(lu.abs());
        }
    }
    KktResiduals {
        stationarity,
        primal_feas: primal,
        dual_feas: dual.max(0.0),
        complementarity: comp / f_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{QcqpProblem, SparseVec};

    /// min x² s.t. x ≥ 1
    fn active_bound() -> QcqpProblem {
        let mut p = QcqpProblem::new(1);
        p.objective.q.push(0, 0, 2.0);
        p.lower[0] = 1.0;
        p
    }

    #[test]
    fn exact_optimum_has_zero_residuals() {
        let p = active_bound();
        let mut d = Duals::zeros(&p);
        d.lower[0] = 2.0;
        let r = verify_kkt(&p, &[1.0], &d);
        assert_eq!(r, KktResiduals::default());
    }

    #[test]
    fn perturbation_shows_up_in_stationarity() {
        let p = active_bound();
        let mut d = Duals::zeros(&p);
        d.lower[0] = 2.0;
        let delta = 1e-3;
        let r = verify_kkt(&p, &[1.0 + delta], &d);
        // ‖Q δ‖ with c = 0, so no normalization.
        assert!((r.stationarity - 2.0 * delta).abs() < 1e-12);
        assert!(r.primal_feas == 0.0);
    }

    #[test]
    fn infeasible_point_reports_violation() {
        let mut p = QcqpProblem::new(2);
        p.lower[0] = 0.0;
        // x0 + x1 = 0
        p.eq.push(crate::problem::LinearEq::new(
            SparseVec::from_pairs(vec![(0, 1.0), (1, 1.0)]),
            0.0,
        ));
        let d = Duals::zeros(&p);
        let r = verify_kkt(&p, &[-0.5, 0.2], &d);
        assert!((r.primal_feas - 0.5).abs() < 1e-15);
    }

    #[test]
    fn negative_multiplier_is_dual_infeasible() {
        let p = active_bound();
        let mut d = Duals::zeros(&p);
        d.lower[0] = -0.25;
        assert_eq!(verify_kkt(&p, &[1.0], &d).dual_feas, 0.25);
    }
}
