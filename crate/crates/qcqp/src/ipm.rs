//! Primal-dual interior-point method.
//!
//! The QCQP is rewritten as a cone program with a quadratic objective,
//!
//! ```text
//! minimise ½ xᵀQx + cᵀx   s.t.  Ax = b,  Gx + s = h,  s ∈ K
//! ```
//!
//! where `K` is a product of a nonnegative orthant (linear inequalities and
//! finite bounds) and second-order cones. A quadratic inequality
//! `½ xᵀPx + qᵀx + s ≤ 0` with `P = FᵀF` becomes `‖Fx‖ ≤ √(−2s)` when `q = 0`,
//! and the rotated cone `‖Fx‖² ≤ 2t`, `t = −qᵀx − s` otherwise.
//!
//! Iterations use Nesterov-Todd scaling and Mehrotra predictor-corrector
//! steps. Each Newton system is the quasi-definite KKT matrix
//!
//! ```text
//! [ Q   Aᵀ  Gᵀ  ]
//! [ A   0   0   ]
//! [ G   0  −W²  ]
//! ```
//!
//! factored by sparse LDLᵀ with static regularization and iterative
//! refinement against the unregularized matrix.

use std::time::Instant;

use crate::cones::{dot, ConeKind, ConeSet, NtScaling};
use crate::error::QcqpError;
use crate::kkt::{verify_kkt, Duals, KktResiduals};
use crate::ldl::SparseLdl;
use crate::polish::polish;
use crate::problem::QcqpProblem;

const POLISH_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Threshold on every (scale-normalized) KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    pub static_reg: f64,
    pub refine_steps: usize,
    /// Initial primal guess. Only used to seed the iterates.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            static_reg: 1e-9,
            refine_steps: 6,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub status: Status,
    pub x: Vec<f64>,
    pub duals: Duals,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub iterations: usize,
    /// Wall-clock seconds.
    pub solve_time: f64,
}

/// Solves with default options and the given tolerance.
pub fn solve(problem: &QcqpProblem, tol: f64) -> Result<QcqpSolution, QcqpError> {
    solve_with(
        problem,
        &SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
}

#[derive(Debug, Clone, Copy)]
enum EqOrigin {
    Constraint(usize),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone, Copy)]
enum SocOrigin {
    Standard { ineq: usize, radius: f64 },
    Rotated { ineq: usize },
}

/// Cone-program form of a [`QcqpProblem`].
struct ConicForm {
    n: usize,
    q: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    a_rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    eq_origin: Vec<EqOrigin>,
    g_rows: Vec<Vec<(usize, f64)>>,
    h: Vec<f64>,
    cones: ConeSet,
    row_origin: Vec<RowOrigin>,
    soc_origin: Vec<SocOrigin>,
}

impl ConicForm {
    /// Returns `None` when a constraint is trivially infeasible
    /// (`½‖Fx‖² + s ≤ 0` with `s > 0`).
    fn new(p: &QcqpProblem) -> Option<Self> {
        let n = p.n;
        let mut a_rows = Vec::new();
        let mut b = Vec::new();
        let mut eq_origin = Vec::new();
        for (k, e) in p.eq.iter().enumerate() {
            a_rows.push(e.a.compressed());
            b.push(e.b);
            eq_origin.push(EqOrigin::Constraint(k));
        }
        let mut g_rows = Vec::new();
        let mut h = Vec::new();
        let mut row_origin = Vec::new();
        for i in 0..n {
            let (lo, hi) = (p.lower[i], p.upper[i]);
            if lo == hi {
                a_rows.push(vec![(i, 1.0)]);
                b.push(lo);
                eq_origin.push(EqOrigin::Fixed(i));
                continue;
            }
            if lo.is_finite() {
                g_rows.push(vec![(i, -1.0)]);
                h.push(-lo);
                row_origin.push(RowOrigin::Lower(i));
            }
            if hi.is_finite() {
                g_rows.push(vec![(i, 1.0)]);
                h.push(hi);
                row_origin.push(RowOrigin::Upper(i));
            }
        }
        let mut socs = Vec::new();
        for (k, c) in p.quad_ineq.iter().enumerate() {
            if c.p.is_empty() {
                g_rows.push(c.q.compressed());
                h.push(-c.s);
                row_origin.push(RowOrigin::Ineq(k));
            } else {
                socs.push(k);
            }
        }
        let mut cones = ConeSet::default();
        cones.push(ConeKind::Nonneg, g_rows.len());
        let mut soc_origin = Vec::new();
        for k in socs {
            let c = &p.quad_ineq[k];
            let (support, f) = c.p.psd_factor();
            let f_rows: Vec<Vec<(usize, f64)>> = (0..f.nrows())
                .map(|r| {
                    support
                        .iter()
                        .enumerate()
                        .filter(|(col, _)| f[(r, *col)] != 0.0)
                        .map(|(col, &var)| (var, -f[(r, col)]))
                        .collect()
                })
                .collect();
            let q = c.q.compressed();
            if q.is_empty() {
                if c.s > 0.0 {
                    return None;
                }
                let radius = (-2.0 * c.s).sqrt();
                g_rows.push(Vec::new());
                h.push(radius);
                for row in f_rows {
                    g_rows.push(row);
                    h.push(0.0);
                }
                cones.push(ConeKind::Soc, 1 + f.nrows());
                soc_origin.push(SocOrigin::Standard { ineq: k, radius });
            } else {
                g_rows.push(q.clone());
                h.push(0.5 - c.s);
                g_rows.push(q);
                h.push(-0.5 - c.s);
                for row in f_rows {
                    g_rows.push(row);
                    h.push(0.0);
                }
                cones.push(ConeKind::Soc, 2 + f.nrows());
                soc_origin.push(SocOrigin::Rotated { ineq: k });
            }
        }
        Some(Self {
            n,
            q: p.objective.q.compressed(),
            c: p.objective.c.clone(),
            a_rows,
            b,
            eq_origin,
            g_rows,
            h,
            cones,
            row_origin,
            soc_origin,
        })
    }

    fn p_eq(&self) -> usize {
        self.a_rows.len()
    }

    fn m(&self) -> usize {
        self.g_rows.len()
    }

    fn q_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, v) in &self.q {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    fn rows_mul(rows: &[Vec<(usize, f64)>], x: &[f64]) -> Vec<f64> {
        rows.iter().map(|r| r.iter().map(|(j, v)| v * x[*j]).sum()).collect()
    }

    fn rows_tmul_add(rows: &[Vec<(usize, f64)>], y: &[f64], out: &mut [f64]) {
        for (r, yr) in rows.iter().zip(y) {
            for (j, v) in r {
                out[*j] += v * yr;
            }
        }
    }

    /// Maps conic multipliers back to the QCQP's constraint families.
    fn original_duals(&self, p: &QcqpProblem, y: &[f64], z: &[f64]) -> Duals {
        let mut d = Duals::zeros(p);
        for (r, origin) in self.eq_origin.iter().enumerate() {
            match *origin {
                EqOrigin::Constraint(k) => d.eq[k] = y[r],
                EqOrigin::Fixed(i) => {
                    d.upper[i] = y[r].max(0.0);
                    d.lower[i] = (-y[r]).max(0.0);
                }
            }
        }
        for (r, origin) in self.row_origin.iter().enumerate() {
            match *origin {
                RowOrigin::Ineq(k) => d.ineq[k] = z[r],
                RowOrigin::Lower(i) => d.lower[i] = z[r],
                RowOrigin::Upper(i) => d.upper[i] = z[r],
            }
        }
        let soc_blocks = self.cones.blocks.iter().filter(|b| b.kind == ConeKind::Soc);
        for (blk, origin) in soc_blocks.zip(&self.soc_origin) {
            let zb = &z[blk.offset..blk.offset + blk.dim];
            match *origin {
                SocOrigin::Standard { ineq, radius } => {
                    d.ineq[ineq] = if radius > 0.0 { zb[0] / radius } else { 0.0 };
                }
                SocOrigin::Rotated { ineq } => d.ineq[ineq] = zb[0] + zb[1],
            }
        }
        d
    }
}

/// KKT matrix with a fixed sparsity pattern.
struct KktSystem {
    positions: Vec<(usize, usize)>,
    values: Vec<f64>,
    /// Start of the `−W²` entries in `values`.
    w2_start: usize,
    ldl: SparseLdl,
    n: usize,
    p: usize,
}

impl KktSystem {
    fn new(form: &ConicForm, static_reg: f64, w2_pattern: &[(usize, usize, f64)]) -> Self {
        let (n, p) = (form.n, form.p_eq());
        let mut positions = Vec::new();
        let mut values = Vec::new();
        for &(i, j, v) in &form.q {
            positions.push((i, j));
            values.push(v);
        }
        for i in 0..n {
            positions.push((i, i));
            values.push(static_reg);
        }
        for (r, row) in form.a_rows.iter().enumerate() {
            for &(j, v) in row {
                positions.push((j, n + r));
                values.push(v);
            }
            positions.push((n + r, n + r));
            values.push(-static_reg);
        }
        for (r, row) in form.g_rows.iter().enumerate() {
            for &(j, v) in row {
                positions.push((j, n + p + r));
                values.push(v);
            }
        }
        let w2_start = values.len();
        for &(i, j, v) in w2_pattern {
            positions.push((n + p + i, n + p + j));
            values.push(-v);
        }
        let dim = n + p + form.m();
        let signs: Vec<f64> = (0..dim).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        let ldl = SparseLdl::new(dim, &positions, &signs);
        Self {
            positions,
            values,
            w2_start,
            ldl,
            n,
            p,
        }
    }

    fn refactor(&mut self, w2: &[(usize, usize, f64)]) {
        for (t, &(_, _, v)) in w2.iter().enumerate() {
            self.values[self.w2_start + t] = -v;
        }
        let reg = self.ldl.factor(&self.values);
        if reg > 0 {
            log::trace!("{reg} pivots dynamically regularized");
        }
    }

    /// Product with the unregularized KKT matrix.
    fn mul(&self, form: &ConicForm, w2: &[(usize, usize, f64)], v: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let (vx, rest) = v.split_at(n);
        let (vy, vz) = rest.split_at(p);
        let mut out = vec![0.0; v.len()];
        let qx = form.q_mul(vx);
        out[..n].copy_from_slice(&qx);
        ConicForm::rows_tmul_add(&form.a_rows, vy, &mut out[..n]);
        ConicForm::rows_tmul_add(&form.g_rows, vz, &mut out[..n]);
        let ax = ConicForm::rows_mul(&form.a_rows, vx);
        out[n..n + p].copy_from_slice(&ax);
        let gx = ConicForm::rows_mul(&form.g_rows, vx);
        for (r, g) in gx.iter().enumerate() {
            out[n + p + r] = *g;
        }
        for &(i, j, w) in w2 {
            out[n + p + i] -= w * vz[j];
            if i != j {
                out[n + p + j] -= w * vz[i];
            }
        }
        out
    }

    fn solve(&self, form: &ConicForm, w2: &[(usize, usize, f64)], rhs: &[f64], refine_steps: usize) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.ldl.solve_in_place(&mut x);
        let rhs_norm = rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for _ in 0..refine_steps {
            let kx = self.mul(form, w2, &x);
            let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            let err = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if err <= 1e-14 * rhs_norm {
                break;
            }
            self.ldl.solve_in_place(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
        // Guard against the positions vector being reused with stale layout.
        debug_assert_eq!(self.positions.len(), self.values.len());
        x
    }
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn solve_with(problem: &QcqpProblem, opts: &SolverOptions) -> Result<QcqpSolution, QcqpError> {
    problem.validate()?;
    let start = Instant::now();
    let Some(form) = ConicForm::new(problem) else {
        let x = vec![0.0; problem.n];
        let duals = Duals::zeros(problem);
        let kkt = verify_kkt(problem, &x, &duals);
        return Ok(QcqpSolution {
            status: Status::Infeasible,
            objective: problem.objective_value(&x),
            x,
            duals,
            kkt,
            iterations: 0,
            solve_time: start.elapsed().as_secs_f64(),
        });
    };
    let (n, p, m) = (form.n, form.p_eq(), form.m());
    let cones = &form.cones;
    let degree = cones.degree().max(1) as f64;
    let e = cones.identity();

    // Initial point from two least-squares solves with identity scaling.
    let mut w2 = NtScaling::new(cones, &e, &e).w_squared_entries();
    let mut kkt = KktSystem::new(&form, opts.static_reg, &w2);
    kkt.refactor(&w2);

    let mut rhs = vec![0.0; n];
    rhs.extend_from_slice(&form.b);
    rhs.extend_from_slice(&form.h);
    let primal = kkt.solve(&form, &w2, &rhs, opts.refine_steps);
    let mut rhs: Vec<f64> = form.c.iter().map(|v| -v).collect();
    rhs.resize(n + p + m, 0.0);
    let dual = kkt.solve(&form, &w2, &rhs, opts.refine_steps);
    let mut it = Iterate {
        x: primal[..n].to_vec(),
        y: dual[n..n + p].to_vec(),
        z: dual[n + p..].to_vec(),
        s: primal[n + p..].iter().map(|v| -v).collect(),
    };
    if let Some(w) = &opts.warm_start {
        if w.len() == n && w.iter().all(|v| v.is_finite()) {
            it.x = w.clone();
            let gx = ConicForm::rows_mul(&form.g_rows, &it.x);
            it.s = form.h.iter().zip(&gx).map(|(h, g)| h - g).collect();
        }
    }
    cones.push_to_interior(&mut it.s);
    cones.push_to_interior(&mut it.z);

    let c_norm = form.c.iter().fold(0.0_f64, |mx, v| mx.max(v.abs()));
    let mut best: Option<(f64, Vec<f64>, Duals, KktResiduals)> = None;
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut small_steps = 0;
    let mut polished = None;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        // Residuals of the conic KKT conditions.
        let mut rx = form.q_mul(&it.x);
        for i in 0..n {
            rx[i] += form.c[i];
        }
        ConicForm::rows_tmul_add(&form.a_rows, &it.y, &mut rx);
        ConicForm::rows_tmul_add(&form.g_rows, &it.z, &mut rx);
        let ax = ConicForm::rows_mul(&form.a_rows, &it.x);
        let ry: Vec<f64> = ax.iter().zip(&form.b).map(|(a, b)| a - b).collect();
        let gx = ConicForm::rows_mul(&form.g_rows, &it.x);
        let rz: Vec<f64> = (0..m).map(|r| gx[r] + it.s[r] - form.h[r]).collect();
        let gap = dot(&it.s, &it.z);
        let mu = gap / degree;

        let duals = form.original_duals(problem, &it.y, &it.z);
        let res = verify_kkt(problem, &it.x, &duals);
        let pobj = problem.objective_value(&it.x);
        if best.as_ref().is_none_or(|b| res.max() < b.0) {
            best = Some((res.max(), it.x.clone(), duals.clone(), res));
        }
        log::trace!(
            "iter {iter}: obj {pobj:.6e} stat {:.1e} pfeas {:.1e} comp {:.1e} gap {gap:.1e}",
            res.stationarity,
            res.primal_feas,
            res.complementarity
        );
        if !gap.is_finite() || !pobj.is_finite() {
            log::debug!("non-finite iterate at iteration {iter}");
            break;
        }
        let obj_scale = 1.0 + pobj.abs();
        if res.within(opts.tol) && gap <= opts.tol * obj_scale {
            status = Status::Optimal;
            break;
        }
        let conic_res = (inf_norm(&rx) / (1.0 + c_norm))
            .max(inf_norm(&ry) / (1.0 + inf_norm(&form.b)))
            .max(inf_norm(&rz) / (1.0 + inf_norm(&form.h)));
        if conic_res <= opts.tol && gap <= opts.tol * obj_scale {
            if let Some((x, d, r)) = polish(problem, &it.x, &duals, POLISH_STEPS) {
                if r.within(opts.tol) {
                    polished = Some((x, d, r));
                    status = Status::Optimal;
                    break;
                }
                if best.as_ref().is_none_or(|b| r.max() < b.0) {
                    best = Some((r.max(), x, d, r));
                }
            }
            if gap <= 1e-15 * obj_scale {
                break;
            }
        }
        if iter == opts.max_iter {
            break;
        }

        // Primal infeasibility certificate: Aᵀy + Gᵀz = 0, bᵀy + hᵀz < 0.
        let cert = -(dot(&form.b, &it.y) + dot(&form.h, &it.z));
        if cert > 0.0 {
            let mut aty = vec![0.0; n];
            ConicForm::rows_tmul_add(&form.a_rows, &it.y, &mut aty);
            ConicForm::rows_tmul_add(&form.g_rows, &it.z, &mut aty);
            let lhs = aty.iter().fold(0.0_f64, |mx, v| mx.max(v.abs()));
            let dual_size = it.y.iter().chain(&it.z).fold(0.0_f64, |mx, v| mx.max(v.abs()));
            if lhs <= opts.tol * cert && dual_size > 1e6 * (1.0 + c_norm) {
                status = Status::Infeasible;
                break;
            }
        }

        let scaling = NtScaling::new(cones, &it.s, &it.z);
        let lambda = scaling.apply(&it.z);
        w2 = scaling.w_squared_entries();
        kkt.refactor(&w2);

        let newton = |ds: &[f64]| -> (Vec<f64>, Vec<f64>) {
            // Returns the KKT solution [dx; dy; dz] and ds.
            let t = cones.jordan_div(&lambda, ds);
            let wt = scaling.apply(&t);
            let mut rhs = Vec::with_capacity(n + p + m);
            rhs.extend(rx.iter().map(|v| -v));
            rhs.extend(ry.iter().map(|v| -v));
            rhs.extend((0..m).map(|r| -rz[r] - wt[r]));
            let sol = kkt.solve(&form, &w2, &rhs, opts.refine_steps);
            let wdz = scaling.apply(&sol[n + p..]);
            let inner: Vec<f64> = t.iter().zip(&wdz).map(|(a, b)| a - b).collect();
            let dsv = scaling.apply(&inner);
            (sol, dsv)
        };
        let step_to_boundary =
            |dz: &[f64], dsv: &[f64]| -> f64 { cones.max_step(&it.s, dsv).min(cones.max_step(&it.z, dz)) };

        // Predictor.
        let lsq = cones.jordan(&lambda, &lambda);
        let ds_aff: Vec<f64> = lsq.iter().map(|v| -v).collect();
        let (sol_a, dsv_a) = newton(&ds_aff);
        let dz_a = &sol_a[n + p..];
        let alpha_a = step_to_boundary(dz_a, &dsv_a).min(1.0);
        let sigma = if m > 0 {
            let s_new: Vec<f64> = (0..m).map(|r| it.s[r] + alpha_a * dsv_a[r]).collect();
            let z_new: Vec<f64> = (0..m).map(|r| it.z[r] + alpha_a * dz_a[r]).collect();
            (dot(&s_new, &z_new) / gap).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // Corrector.
        let wds = scaling.apply_inv(&dsv_a);
        let wdz = scaling.apply(dz_a);
        let corr = cones.jordan(&wds, &wdz);
        let ds_cc: Vec<f64> = (0..m).map(|r| -lsq[r] - corr[r] + sigma * mu * e[r]).collect();
        let (sol_c, dsv_c) = newton(&ds_cc);
        let dz_c = &sol_c[n + p..];
        let alpha = (0.99 * step_to_boundary(dz_c, &dsv_c)).min(1.0);

        for i in 0..n {
            it.x[i] += alpha * sol_c[i];
        }
        for r in 0..p {
            it.y[r] += alpha * sol_c[n + r];
        }
        for r in 0..m {
            it.z[r] += alpha * dz_c[r];
            it.s[r] += alpha * dsv_c[r];
        }
        if alpha < 1e-10 {
            small_steps += 1;
            if small_steps >= 5 {
                log::debug!("interior-point steps stalled at iteration {iter}");
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    let (x, duals, kkt_res) = match (status, polished) {
        (Status::Optimal, Some(p)) => p,
        (Status::Optimal, None) => {
            let duals = form.original_duals(problem, &it.y, &it.z);
            let res = verify_kkt(problem, &it.x, &duals);
            (it.x, duals, res)
        }
        _ => {
            let (_, x, d, r) = best.expect("at least one iterate evaluated");
            if status == Status::MaxIter {
                match polish(problem, &x, &d, POLISH_STEPS) {
                    Some((px, pd, pr)) if pr.max() < r.max() => {
                        if pr.within(opts.tol) {
                            status = Status::Optimal;
                        }
                        (px, pd, pr)
                    }
                    _ => (x, d, r),
                }
            } else {
                (x, d, r)
            }
        }
    };
    Ok(QcqpSolution {
        status,
        objective: problem.objective_value(&x),
        x,
        duals,
        kkt: kkt_res,
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
    })
}
