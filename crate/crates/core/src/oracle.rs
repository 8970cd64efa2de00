//! Offline reference for the convex controller: the horizon problem with
//! exact bilinear converter power and the true (non-convex) voltage floor,
//! solved locally by sequential convex programming from the convex
//! solution, and the resulting loss gap over a scenario.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::SymmetricEigen;
use nalgebra::{DMatrix, DVector};
use qcqp::{solve_with, LinearEq, QcqpProblem, QuadIneq, SolverOptions, SparseVec, Status, SymMatrix};

use crate::mpc::{flat, EfficiencyMode, HorizonProblem, Layout, Mpc, MpcConfig, Predictions};
use crate::scenario::Scenario;
use crate::sim::{mpc_batteries, plant_for, Inputs, RunResult, SimError};

/// `p_dis − p_ch − vᵀ M v = 0` over one converter's power variables and the
/// stacked voltages of its step, all per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearEq {
    pub p_dis: usize,
    pub p_ch: usize,
    pub vars: Vec<usize>,
    pub m: DMatrix<f64>,
}

impl BilinearEq {
    fn v(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.vars.len(), self.vars.iter().map(|&i| x[i]))
    }

    pub fn power(&self, x: &[f64]) -> f64 {
        let v = self.v(x);
        v.dot(&(&self.m * &v))
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        x[self.p_dis] - x[self.p_ch] - self.power(x)
    }
}

#[derive(Debug, Clone)]
pub struct NonconvexProblem {
    /// Objective, linear equalities, convex inequalities and bounds.
    pub base: QcqpProblem,
    pub layout: Layout,
    pub bilinear: Vec<BilinearEq>,
    /// (d, q) variable pairs whose magnitude must stay above `v_min`.
    pub floors: Vec<(usize, usize)>,
    pub v_min: f64,
}

impl NonconvexProblem {
    /// Replaces the linearized power rows of a convex horizon problem by the
    /// exact bilinear forms, and the d-axis floor by the magnitude floor.
    pub fn from_horizon(hp: &HorizonProblem, cfg: &MpcConfig) -> Self {
        let lay = hp.layout;
        let drop: BTreeSet<usize> = hp.power_rows.iter().flatten().copied().collect();
        let mut base = hp.problem.clone();
        base.eq = base
            .eq
            .into_iter()
            .enumerate()
            .filter(|(r, _)| !drop.contains(r))
            .map(|(_, e)| e)
            .collect();
        let scale = cfg.v_ll * cfg.v_ll / cfg.p_base;
        let mut bilinear = Vec::new();
        let mut floors = Vec::new();
        for k in 0..lay.n_p {
            for (i, model) in hp.networks[k].models.iter().enumerate() {
                let cross = model.g_u.transpose() * &model.g_il;
                let m = (&cross + cross.transpose()) * (0.5 * scale);
                bilinear.push(BilinearEq {
                    p_dis: lay.p_dis(k, i),
                    p_ch: lay.p_ch(k, i),
                    vars: lay.v_block(k),
                    m,
                });
                let d = lay.v(k, i, 0);
                base.lower[d] = -cfg.v_upper_frac;
                floors.push((d, lay.v(k, i, 1)));
            }
        }
        Self {
            base,
            layout: lay,
            bilinear,
            floors,
            v_min: cfg.v_lower_frac,
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.base.objective_value(x)
    }

    /// Largest bilinear residual relative to 1 + |converter power|.
    pub fn bilinear_violation(&self, x: &[f64]) -> f64 {
        self.bilinear
            .iter()
            .map(|b| b.residual(x).abs() / (1.0 + b.power(x).abs()))
            .fold(0.0, f64::max)
    }

    pub fn floor_violation(&self, x: &[f64]) -> f64 {
        let v2 = self.v_min * self.v_min;
        self.floors
            .iter()
            .map(|&(d, q)| (v2 - x[d] * x[d] - x[q] * x[q]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.base
            .max_violation(x)
            .max(self.bilinear_violation(x))
            .max(self.floor_violation(x))
    }

    fn merit(&self, x: &[f64], rho: f64) -> f64 {
        self.objective(x) + rho * self.bilinear.iter().map(|b| b.residual(x).abs()).sum::<f64>()
    }

    /// Curvature of the objective plus the multiplier-weighted constraint
    /// curvature on each step's voltages, projected onto the PSD cone.
    fn model_hessian(&self, mult: &Multipliers) -> SymMatrix {
        let lay = self.layout;
        let nv = lay.n_vsc;
        let mut h = SymMatrix::new();
        for k in 0..lay.n_p {
            let vars = lay.v_block(k);
            let mut block = self.base.objective.q.local_dense(&vars);
            for i in 0..nv {
                let j = k * nv + i;
                block -= &self.bilinear[j].m * (2.0 * mult.power[j]);
                let mu = mult.floor[j].max(0.0);
                block[(2 * i, 2 * i)] -= 2.0 * mu;
                block[(2 * i + 1, 2 * i + 1)] -= 2.0 * mu;
            }
            let sym = (&block + block.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
            let psd = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
            h.add_block(&vars, &psd);
        }
        h
    }

    /// Convex subproblem about `xk`: second-order model of the objective,
    /// linearized power rows with elastic slacks, linearized magnitude
    /// floors, and a box on the voltages.
    fn subproblem(&self, xk: &[f64], radius: f64, rho: f64, mult: &Multipliers) -> QcqpProblem {
        let n = self.base.n;
        let m = self.bilinear.len();
        let mut p = QcqpProblem::new(n + 2 * m);
        let h = self.model_hessian(mult);
        // ½xᵀHx + (c + (Q − H)xk)ᵀx matches f's value and gradient at xk.
        let qx = self.base.objective.q.mul(xk, n);
        let hx = h.mul(xk, n);
        for i in 0..n {
            p.objective.c[i] = self.base.objective.c[i] + qx[i] - hx[i];
        }
        let lin: f64 = (0..n).map(|i| p.objective.c[i] * xk[i]).sum();
        p.objective.r = self.objective(xk) - 0.5 * h.quad_form(xk) - lin;
        p.objective.q = h;
        p.eq = self.base.eq.clone();
        p.quad_ineq = self.base.quad_ineq.clone();
        p.lower[..n].copy_from_slice(&self.base.lower);
        p.upper[..n].copy_from_slice(&self.base.upper);
        for (j, b) in self.bilinear.iter().enumerate() {
            let (sp, sm) = (n + 2 * j, n + 2 * j + 1);
            p.objective.c[sp] = rho;
            p.objective.c[sm] = rho;
            p.lower[sp] = 0.0;
            p.lower[sm] = 0.0;
            let v = b.v(xk);
            let g = &b.m * &v * 2.0;
            let mut a = SparseVec::new();
            a.push(b.p_dis, 1.0);
            a.push(b.p_ch, -1.0);
            for (t, &var) in b.vars.iter().enumerate() {
                if g[t] != 0.0 {
                    a.push(var, -g[t]);
                }
            }
            a.push(sp, 1.0);
            a.push(sm, -1.0);
            p.eq.push(LinearEq::new(a, -v.dot(&(&b.m * &v))));
        }
        let v2 = self.v_min * self.v_min;
        for &(d, q) in &self.floors {
            let (vd, vq) = (xk[d], xk[q]);
            p.quad_ineq.push(QuadIneq::linear(
                SparseVec::from_pairs(vec![(d, -2.0 * vd), (q, -2.0 * vq)]),
                vd * vd + vq * vq + v2,
            ));
            for var in [d, q] {
                p.lower[var] = p.lower[var].max(xk[var] - radius);
                p.upper[var] = p.upper[var].min(xk[var] + radius);
            }
        }
        p
    }
}

/// Multiplier estimates for the bilinear rows and magnitude floors, in the
/// order of [`NonconvexProblem::bilinear`] and [`NonconvexProblem::floors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub power: Vec<f64>,
    pub floor: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(p: &NonconvexProblem) -> Self {
        Self {
            power: vec![0.0; p.bilinear.len()],
            floor: vec![0.0; p.floors.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOptions {
    pub max_iter: usize,
    pub step_tol: f64,
    pub feas_tol: f64,
    /// Stop once the predicted merit reduction falls below this fraction
    /// of the merit (flat valleys otherwise keep the step at the radius).
    pub merit_tol: f64,
    /// Initial trust radius on voltage variables, per unit.
    pub radius: f64,
    pub max_radius: f64,
    /// Initial penalty on bilinear residuals.
    pub rho: f64,
    pub solver_tol: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            step_tol: 1e-6,
            feas_tol: 1e-6,
            merit_tol: 1e-8,
            radius: 0.05,
            max_radius: 0.2,
            rho: 10.0,
            solver_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalStatus {
    Converged,
    /// The trust region collapsed; the best feasible iterate is returned.
    Stalled,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: LocalStatus,
    pub bilinear_violation: f64,
    pub floor_violation: f64,
    pub solve_time: f64,
}

/// Sequential convex programming from `start`, with multiplier estimates
/// `mult` (zeros if unknown).
pub fn solve_local(problem: &NonconvexProblem, start: &[f64], mult: Multipliers, opts: &LocalOptions) -> LocalSolution {
    let mut mult = mult;
    let (n_eq, n_ineq) = (problem.base.eq.len(), problem.base.quad_ineq.len());
    let t0 = Instant::now();
    let n = problem.base.n;
    let mut x = start[..n].to_vec();
    let mut rho = opts.rho;
    let mut radius = opts.radius;
    let solver = SolverOptions {
        tol: opts.solver_tol,
        ..SolverOptions::default()
    };
    let feasible = |x: &[f64]| problem.max_violation(x) <= opts.feas_tol;
    let mut best: Option<Vec<f64>> = feasible(&x).then(|| x.clone());
    let finish = |x: Vec<f64>, it: usize, status: LocalStatus| LocalSolution {
        objective: problem.objective(&x),
        bilinear_violation: problem.bilinear_violation(&x),
        floor_violation: problem.floor_violation(&x),
        x,
        iterations: it,
        status,
        solve_time: t0.elapsed().as_secs_f64(),
    };
    let mut status = LocalStatus::MaxIter;
    let mut iterations = opts.max_iter;
    for it in 1..=opts.max_iter {
        if radius < 1e-9 || rho > 1e9 {
            status = LocalStatus::Stalled;
            iterations = it - 1;
            break;
        }
        let sub = problem.subproblem(&x, radius, rho, &mult);
        let sol = match solve_with(&sub, &solver) {
            Ok(s) if s.status == Status::Optimal || sub.max_violation(&s.x) <= opts.feas_tol => s,
            _ => {
                radius /= 4.0;
                continue;
            }
        };
        let trial = &sol.x[..n];
        let step = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let phi = problem.merit(&x, rho);
        let predicted = phi - sub.objective_value(&sol.x);
        if step <= opts.step_tol || predicted <= opts.merit_tol * (1.0 + phi.abs()) {
            if problem.bilinear_violation(&x) <= opts.feas_tol && problem.floor_violation(&x) <= opts.feas_tol {
                return finish(x, it, LocalStatus::Converged);
            }
            // Stationary for the penalty but infeasible: penalize harder.
            rho *= 10.0;
            continue;
        }
        let ratio = (phi - problem.merit(trial, rho)) / predicted;
        debug!("scp {it}: merit {phi:.9e} predicted {predicted:.3e} ratio {ratio:.3} step {step:.3e} radius {radius:.3e} rho {rho:.1}");
        if ratio >= 0.1 {
            x = trial.to_vec();
            mult.power.copy_from_slice(&sol.duals.eq[n_eq..]);
            mult.floor.copy_from_slice(&sol.duals.ineq[n_ineq..]);
            let biggest = mult.power.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
            rho = rho.max(2.0 * biggest);
            if feasible(&x)
                && best
                    .as_ref()
                    .is_none_or(|b| problem.objective(&x) <= problem.objective(b))
            {
                best = Some(x.clone());
            }
        }
        if ratio < 0.25 {
            radius /= 4.0;
        } else if ratio > 0.75 && step >= 0.9 * radius {
            radius = (2.0 * radius).min(opts.max_radius);
        }
    }
    if status == LocalStatus::Stalled {
        warn!("trust region collapsed; returning the best feasible iterate");
    }
    let out = if feasible(&x) { x } else { best.unwrap_or(x) };
    finish(out, iterations, status)
}

/// Multiplier estimates from a convex solve of the same horizon: power-row
/// duals carry over directly and the d-axis floor duals are rescaled to the
/// magnitude floor's gradient.
pub fn convex_multipliers(hp: &HorizonProblem, nc: &NonconvexProblem, x: &[f64], duals: &qcqp::Duals) -> Multipliers {
    let power = hp.power_rows.iter().flatten().map(|&r| duals.eq[r]).collect();
    let floor = nc
        .floors
        .iter()
        .map(|&(d, _)| duals.lower[d] / (2.0 * x[d].abs().max(1e-3)))
        .collect();
    Multipliers { power, floor }
}

/// Relative loss reduction of the reference over the convex controller.
pub fn gap(loss_convex: f64, loss_nonconvex: f64) -> f64 {
    (loss_convex - loss_nonconvex) / loss_convex
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub start: usize,
    pub len: usize,
    pub status: LocalStatus,
    pub iterations: usize,
    /// Start solve plus local refinement, s.
    pub solve_time: f64,
    /// Plant losses per step under the reference voltages, W.
    pub losses: Vec<f64>,
    pub bilinear_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub windows: Vec<WindowResult>,
    pub loss_convex_kw: f64,
    pub loss_nonconvex_kw: f64,
    pub gap: f64,
    pub convex_step_time: f64,
    pub nonconvex_window_time: f64,
}

impl GapReport {
    pub fn speedup(&self) -> f64 {
        self.nonconvex_window_time / self.convex_step_time
    }
}

/// Solves the reference problem window by window with perfect predictions,
/// applies its voltages to a separate plant whose SoC carries over between
/// windows, and compares average losses with the convex run.
pub fn run_gap(
    sc: &Scenario,
    convex: &RunResult,
    mode: EfficiencyMode,
    opts: &LocalOptions,
) -> Result<GapReport, SimError> {
    let steps = convex.records.len();
    let inputs: &Inputs = &convex.inputs;
    let window = match sc.file.oracle_cfg.window_steps {
        0 => sc.file.mpc.n_p,
        w => w,
    };
    let mut plant = plant_for(sc);
    let n_pv = plant.pv_indices().len();
    let batt_vsc: Vec<usize> = sc.batteries.iter().map(|b| b.0).collect();
    let mut p_prev = vec![0.0; batt_vsc.len()];
    let mut windows = Vec::new();
    let mut start = 0;
    while start < steps {
        let len = window.min(steps - start);
        let cfg = MpcConfig {
            n_p: len,
            ..sc.file.mpc.clone()
        };
        let soc = plant.soc();
        let mut mpc = Mpc::new(
            sc.topo.clone(),
            mpc_batteries(sc),
            cfg.clone(),
            mode.clone(),
            soc.clone(),
        )?;
        let eta = mpc.update_efficiencies(&soc, &p_prev);
        let preds = Predictions {
            p_mpp: vec![Inputs::perfect(&inputs.pv, start, len); n_pv],
            p_cpl: sc.cpls.iter().map(|c| vec![c.1; len]).collect(),
            load_total: Inputs::perfect(&inputs.load, start, len),
        };
        let t0 = Instant::now();
        let nominal = vec![flat(sc.topo.n_vsc(), cfg.v_ll); len];
        let hp = mpc.build_problem(&soc, &eta, &preds, &nominal)?;
        let sol = solve_with(&hp.problem, &mpc.solver).map_err(crate::mpc::MpcError::from)?;
        let max_dual = hp
            .power_rows
            .iter()
            .flatten()
            .map(|&r| sol.duals.eq[r].abs())
            .fold(0.0, f64::max);
        let nc = NonconvexProblem::from_horizon(&hp, &cfg);
        let local_opts = LocalOptions {
            rho: opts.rho.max(2.0 * max_dual),
            ..*opts
        };
        let mult = convex_multipliers(&hp, &nc, &sol.x, &sol.duals);
        let local = solve_local(&nc, &sol.x, mult, &local_opts);
        let solve_time = t0.elapsed().as_secs_f64();
        let lay = hp.layout;
        let mut losses = Vec::with_capacity(len);
        for j in 0..len {
            let v = DVector::from_iterator(2 * lay.n_vsc, lay.v_block(j).into_iter().map(|m| local.x[m] * cfg.v_ll));
            let k = start + j;
            let m = plant.step(&v, &vec![inputs.pv[k]; n_pv], inputs.load[k])?;
            losses.push(m.losses.total());
            p_prev = batt_vsc.iter().map(|&i| m.p_vsc[i]).collect();
        }
        windows.push(WindowResult {
            start,
            len,
            status: local.status,
            iterations: local.iterations,
            solve_time,
            losses,
            bilinear_violation: local.bilinear_violation,
        });
        start += len;
    }
    let loss_convex = convex.records.iter().map(|r| r.losses.total()).sum::<f64>() / steps as f64;
    let loss_nc = windows.iter().flat_map(|w| w.losses.iter()).sum::<f64>() / steps as f64;
    let convex_step_time = convex.solve_times.iter().sum::<f64>() / steps as f64;
    let nonconvex_window_time = windows.iter().map(|w| w.solve_time).sum::<f64>() / windows.len() as f64;
    Ok(GapReport {
        windows,
        loss_convex_kw: loss_convex / 1e3,
        loss_nonconvex_kw: loss_nc / 1e3,
        gap: gap(loss_convex, loss_nc),
        convex_step_time,
        nonconvex_window_time,
    })
}

/// Per-window rows followed by the overall comparison.
pub fn gap_csv(r: &GapReport) -> String {
    let mut s = String::from("window_start,steps,status,iterations,avg_loss_kw,max_bilinear_residual\n");
    for w in &r.windows {
        let avg = w.losses.iter().sum::<f64>() / w.len as f64 / 1e3;
        let _ = writeln!(
            s,
            "{},{},{:?},{},{:.6},{:.3e}",
            w.start, w.len, w.status, w.iterations, avg, w.bilinear_violation
        );
    }
    s
}

pub fn gap_summary_csv(r: &GapReport) -> String {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "loss_convex_kw,{:.6}", r.loss_convex_kw);
    let _ = writeln!(s, "loss_nonconvex_kw,{:.6}", r.loss_nonconvex_kw);
    let _ = writeln!(s, "gap,{:.6}", r.gap);
    let _ = writeln!(s, "convex_step_time_s,{:.6}", r.convex_step_time);
    let _ = writeln!(s, "nonconvex_window_time_s,{:.6}", r.nonconvex_window_time);
    let _ = writeln!(s, "speedup,{:.2}", r.speedup());
    s
}
