//! Convex receding-horizon dispatch: assembles the loss-minimising QCQP over
//! the horizon from predictions and static network gains, solves it and
//! dispatches the first-interval voltage references.
//!
//! The optimisation runs in per unit (voltage base `v_ll`, power base
//! `p_base`); everything crossing this module's boundary is SI.

use std::collections::HashMap;
use std::rc::Rc;
use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use qcqp::{solve_with, LinearEq, QcqpError, QcqpProblem, QuadIneq, SolverOptions, SparseVec, Status, SymMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{eval_eff, Direction, EffPoly};
use crate::netmodel::{
    load_resistance, loss_quadratic_forms, steady_state_gains, NetError, NetworkTopology, StaticGains, VscKind,
};
use crate::vsc::{linearize_power, vsc_static_gains, VscStaticModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub t_s: f64,
    pub n_p: usize,
    pub v_ll: f64,
    pub v_upper_frac: f64,
    pub v_lower_frac: f64,
    pub i_ph_max: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// W per unit SoC of bound violation.
    pub soc_slack_penalty: f64,
    /// Floor on the per-unit battery loss cost, keeping charge and
    /// discharge strictly costly.
    pub min_batt_loss_frac: f64,
    pub p_base: f64,
    pub solver_tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            t_s: 60.0,
            n_p: 30,
            v_ll: 415.0,
            v_upper_frac: 1.1,
            v_lower_frac: 0.9,
            i_ph_max: 150.0,
            soc_min: 0.2,
            soc_max: 1.0,
            soc_slack_penalty: 1e6,
            min_batt_loss_frac: 1e-4,
            p_base: 1e5,
            solver_tol: 1e-8,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.v_lower_frac && self.v_lower_frac < self.v_upper_frac) {
            return Err("need 0 < v_lower_frac < v_upper_frac".into());
        }
        if self.n_p < 1 || !(self.t_s > 0.0) {
            return Err("need n_p ≥ 1 and t_s > 0".into());
        }
        if !(self.soc_min < self.soc_max) || !(self.i_ph_max > 0.0) || !(self.v_ll > 0.0) || !(self.p_base > 0.0) {
            return Err("invalid SoC window, current limit, voltage or power base".into());
        }
        Ok(())
    }

    pub fn i_base(&self) -> f64 {
        self.p_base / self.v_ll
    }

    /// d–q magnitude bound on the inductor current, A.
    pub fn i_dq_max(&self) -> f64 {
        3f64.sqrt() * self.i_ph_max
    }
}

/// How the controller obtains battery efficiencies each interval.
#[derive(Debug, Clone, PartialEq)]
pub enum EfficiencyMode {
    Variable(EffPoly),
    Constant { eta_ch: f64, eta_dis: f64 },
}

impl EfficiencyMode {
    pub fn constant_default() -> Self {
        Self::Constant {
            eta_ch: 0.9981,
            eta_dis: 0.9980,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcBattery {
    pub vsc: usize,
    pub e_max: f64,
    pub p_ch_max: f64,
    pub p_dis_max: f64,
}

/// Forecasts over the horizon, in W.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// `[pv][k]`, one series per PV converter in topology order.
    pub p_mpp: Vec<Vec<f64>>,
    /// `[cpl][k]`.
    pub p_cpl: Vec<Vec<f64>>,
    /// Total nominal load per step, split evenly over the topology loads.
    pub load_total: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("prediction `{what}` has {got} entries, expected {want}")]
    MissingPrediction { what: String, got: usize, want: usize },
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Solver(#[from] QcqpError),
    #[error("{0}")]
    Config(String),
}

/// Variable positions within the stacked horizon vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_vsc: usize,
    pub n_batt: usize,
    pub n_p: usize,
}

impl Layout {
    pub fn step_len(&self) -> usize {
        4 * self.n_vsc + 2 * self.n_batt
    }

    pub fn len(&self) -> usize {
        self.n_p * self.step_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voltage and charge/discharge power variables only.
    pub fn core_len(&self) -> usize {
        self.n_p * 4 * self.n_vsc
    }

    pub fn v(&self, k: usize, i: usize, axis: usize) -> usize {
        k * self.step_len() + 2 * i + axis
    }

    pub fn v_block(&self, k: usize) -> Vec<usize> {
        (0..2 * self.n_vsc).map(|m| k * self.step_len() + m).collect()
    }

    pub fn p_ch(&self, k: usize, i: usize) -> usize {
        k * self.step_len() + 2 * self.n_vsc + i
    }

    pub fn p_dis(&self, k: usize, i: usize) -> usize {
        k * self.step_len() + 3 * self.n_vsc + i
    }

    pub fn soc(&self, k: usize, j: usize) -> usize {
        k * self.step_len() + 4 * self.n_vsc + j
    }

    pub fn slack(&self, k: usize, j: usize) -> usize {
        k * self.step_len() + 4 * self.n_vsc + self.n_batt + j
    }
}

/// Network quantities for one horizon step.
#[derive(Debug, Clone)]
pub struct StepNetwork {
    pub gains: StaticGains,
    pub models: Vec<VscStaticModel>,
    /// Loss quadratic form over stacked voltages, W per V².
    pub loss_form: DMatrix<f64>,
}

/// Assembled horizon problem plus what is needed to interpret it.
#[derive(Debug, Clone)]
pub struct HorizonProblem {
    pub problem: QcqpProblem,
    pub layout: Layout,
    pub networks: Vec<Rc<StepNetwork>>,
    /// Rows of the power-matching equalities, `[k][vsc]`.
    pub power_rows: Vec<Vec<usize>>,
    /// Indices of the voltage upper-bound constraints, `[k][vsc]`.
    pub voltage_rows: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub status: Status,
    pub iterations: usize,
    pub solve_time: f64,
    pub kkt_max: f64,
    /// The solve failed and previous references were held.
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcDecision {
    /// Stacked d–q references for the current interval, V.
    pub v_dispatch: DVector<f64>,
    /// `[k]` stacked voltages over the horizon, V.
    pub v_horizon: Vec<DVector<f64>>,
    /// `[k][vsc]`, W.
    pub p_ch: Vec<Vec<f64>>,
    pub p_dis: Vec<Vec<f64>>,
    /// `[k][battery]`, SoC after step k.
    pub soc_pred: Vec<Vec<f64>>,
    pub slack: Vec<Vec<f64>>,
    /// Optimal objective over the horizon, W summed over steps.
    pub objective: f64,
    /// (η_ch, η_dis) per battery used in this solve.
    pub eta: Vec<(f64, f64)>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcState {
    pub soc: Vec<f64>,
    /// Previous horizon voltages, V.
    pub prev_v: Option<Vec<DVector<f64>>>,
    /// Last dispatched references, V.
    pub last_refs: DVector<f64>,
    pub eta: Vec<(f64, f64)>,
}

pub struct Mpc {
    pub topo: NetworkTopology,
    pub config: MpcConfig,
    pub mode: EfficiencyMode,
    pub batteries: Vec<MpcBattery>,
    pv: Vec<usize>,
    cpl: Vec<usize>,
    cache: HashMap<Vec<i64>, Rc<StepNetwork>>,
    pub state: MpcState,
    pub solver: SolverOptions,
}

const CACHE_LIMIT: usize = 4096;

impl Mpc {
    pub fn new(
        topo: NetworkTopology,
        batteries: Vec<MpcBattery>,
        config: MpcConfig,
        mode: EfficiencyMode,
        soc0: Vec<f64>,
    ) -> Result<Self, MpcError> {
        config.validate().map_err(MpcError::Config)?;
        topo.validate()?;
        let kind = |k: VscKind| -> Vec<usize> {
            topo.vscs
                .iter()
                .enumerate()
                .filter(|(_, v)| v.kind == k)
                .map(|(i, _)| i)
                .collect()
        };
        let pv = kind(VscKind::Pv);
        let cpl = kind(VscKind::Cpl);
        let batt_vscs = kind(VscKind::Battery);
        let mut listed: Vec<usize> = batteries.iter().map(|b| b.vsc).collect();
        listed.sort_unstable();
        if listed != batt_vscs {
            return Err(MpcError::Config(format!(
                "battery list covers VSCs {listed:?} but the topology has batteries at {batt_vscs:?}"
            )));
        }
        if soc0.len() != batteries.len() {
            return Err(MpcError::Config("one initial SoC per battery required".into()));
        }
        let n = topo.n_vsc();
        let mut refs = DVector::zeros(2 * n);
        for i in 0..n {
            refs[2 * i] = config.v_ll;
        }
        let nb = batteries.len();
        let solver = SolverOptions {
            tol: config.solver_tol,
            ..SolverOptions::default()
        };
        Ok(Self {
            topo,
            config,
            mode,
            batteries,
            pv,
            cpl,
            cache: HashMap::new(),
            state: MpcState {
                soc: soc0,
                prev_v: None,
                last_refs: refs,
                eta: vec![(1.0, 1.0); nb],
            },
            solver,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n_vsc: self.topo.n_vsc(),
            n_batt: self.batteries.len(),
            n_p: self.config.n_p,
        }
    }

    pub fn pv_indices(&self) -> &[usize] {
        &self.pv
    }

    pub fn cpl_indices(&self) -> &[usize] {
        &self.cpl
    }

    /// Efficiencies for this interval from the SoC estimates and the
    /// previous interval's battery powers.
    pub fn update_efficiencies(&self, soc: &[f64], p_prev: &[f64]) -> Vec<(f64, f64)> {
        let floor = self.config.min_batt_loss_frac;
        soc.iter()
            .zip(p_prev)
            .map(|(&s, &p)| match &self.mode {
                EfficiencyMode::Constant { eta_ch, eta_dis } => (*eta_ch, *eta_dis),
                EfficiencyMode::Variable(poly) => {
                    let ch = eval_eff(poly, s, p.abs(), Direction::Charge).min(1.0 - floor);
                    let inv_dis = eval_eff(poly, s, p.abs(), Direction::Discharge).max(1.0 + floor);
                    (ch, 1.0 / inv_dis)
                }
            })
            .collect()
    }

    /// Network for a predicted total load, cached on the per-load power
    /// rounded to 1 W.
    pub fn step_network(&mut self, load_total: f64) -> Result<Rc<StepNetwork>, MpcError> {
        let n = self.topo.loads.len().max(1) as f64;
        let per_load = (load_total / n).max(0.0).round();
        let key: Vec<i64> = self.topo.loads.iter().map(|_| per_load as i64).collect();
        if let Some(net) = self.cache.get(&key) {
            return Ok(net.clone());
        }
        if self.cache.len() >= CACHE_LIMIT {
            self.cache.clear();
        }
        let r: Vec<f64> = self
            .topo
            .loads
            .iter()
            .map(|_| load_resistance(per_load, self.config.v_ll))
            .collect();
        let net = Rc::new(network_for(&self.topo.with_load_resistances(&r))?);
        self.cache.insert(key, net.clone());
        Ok(net)
    }

    fn check_predictions(&self, p: &Predictions) -> Result<(), MpcError> {
        let n_p = self.config.n_p;
        let miss = |what: String, got: usize, want: usize| MpcError::MissingPrediction { what, got, want };
        if p.load_total.len() < n_p {
            return Err(miss("load".into(), p.load_total.len(), n_p));
        }
        if p.p_mpp.len() != self.pv.len() {
            return Err(miss("pv sources".into(), p.p_mpp.len(), self.pv.len()));
        }
        if p.p_cpl.len() != self.cpl.len() {
            return Err(miss("constant power loads".into(), p.p_cpl.len(), self.cpl.len()));
        }
        for (j, s) in p.p_mpp.iter().enumerate() {
            if s.len() < n_p {
                return Err(miss(format!("pv[{j}]"), s.len(), n_p));
            }
        }
        for (j, s) in p.p_cpl.iter().enumerate() {
            if s.len() < n_p {
                return Err(miss(format!("cpl[{j}]"), s.len(), n_p));
            }
        }
        Ok(())
    }

    /// Linearization points: previous horizon shifted by one step with the
    /// last step repeated, or flat nominal voltage at cold start.
    pub fn nominal_voltages(&self) -> Vec<DVector<f64>> {
        let n_p = self.config.n_p;
        match &self.state.prev_v {
            Some(prev) => (0..n_p).map(|k| prev[(k + 1).min(prev.len() - 1)].clone()).collect(),
            None => vec![flat(self.topo.n_vsc(), self.config.v_ll); n_p],
        }
    }

    /// Builds the convex horizon problem.
    pub fn build_problem(
        &mut self,
        soc: &[f64],
        eta: &[(f64, f64)],
        preds: &Predictions,
        nominal: &[DVector<f64>],
    ) -> Result<HorizonProblem, MpcError> {
        self.check_predictions(preds)?;
        let cfg = self.config.clone();
        let lay = self.layout();
        let (n, nb, n_p) = (lay.n_vsc, lay.n_batt, lay.n_p);
        let vb = cfg.v_ll;
        let pb = cfg.p_base;
        let ib = cfg.i_base();
        let mut prob = QcqpProblem::new(lay.len());
        let mut networks = Vec::with_capacity(n_p);
        let mut power_rows = Vec::with_capacity(n_p);
        let mut voltage_rows = Vec::with_capacity(n_p);
        let v_up2 = cfg.v_upper_frac * cfg.v_upper_frac;
        let i_lim = cfg.i_dq_max() / ib;

        for k in 0..n_p {
            let net = self.step_network(preds.load_total[k])?;
            let vars = lay.v_block(k);

            // Network and filter losses.
            let q = &net.loss_form * (2.0 * vb * vb / pb);
            prob.objective.q.add_block(&vars, &q);

            // Power matching, linearized about the nominal point.
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let lin = linearize_power(&net.models[i], &nominal[k]);
                let mut a = SparseVec::new();
                a.push(lay.p_dis(k, i), 1.0);
                a.push(lay.p_ch(k, i), -1.0);
                for (m, &var) in vars.iter().enumerate() {
                    let c = lin.coeff[m] * vb / pb;
                    if c != 0.0 {
                        a.push(var, -c);
                    }
                }
                rows.push(prob.eq.len());
                prob.eq.push(LinearEq::new(a, lin.offset / pb));
            }
            power_rows.push(rows);

            // Voltage magnitude ceiling and d-axis floor.
            let mut vrows = Vec::with_capacity(n);
            for i in 0..n {
                let mut p = SymMatrix::new();
                p.push(lay.v(k, i, 0), lay.v(k, i, 0), 2.0);
                p.push(lay.v(k, i, 1), lay.v(k, i, 1), 2.0);
                vrows.push(prob.quad_ineq.len());
                prob.quad_ineq.push(QuadIneq {
                    p,
                    q: SparseVec::new(),
                    s: -v_up2,
                });
                prob.lower[lay.v(k, i, 0)] = cfg.v_lower_frac;
            }
            voltage_rows.push(vrows);

            // Inductor current ceiling.
            for i in 0..n {
                let m = &net.models[i].g_il * (vb / ib);
                let mut p = SymMatrix::new();
                p.add_block(&vars, &(m.transpose() * &m * 2.0));
                prob.quad_ineq.push(QuadIneq {
                    p,
                    q: SparseVec::new(),
                    s: -i_lim * i_lim,
                });
            }

            // Converter power bounds by kind.
            for i in 0..n {
                let (ch, dis) = (lay.p_ch(k, i), lay.p_dis(k, i));
                if let Some(j) = self.pv.iter().position(|&x| x == i) {
                    let p = preds.p_mpp[j][k].max(0.0) / pb;
                    fix(&mut prob, dis, p);
                    fix(&mut prob, ch, 0.0);
                } else if let Some(j) = self.cpl.iter().position(|&x| x == i) {
                    let p = preds.p_cpl[j][k].max(0.0) / pb;
                    fix(&mut prob, ch, p);
                    fix(&mut prob, dis, 0.0);
                } else {
                    let b = self
                        .batteries
                        .iter()
                        .find(|b| b.vsc == i)
                        .expect("every VSC has a kind");
                    prob.lower[ch] = 0.0;
                    prob.upper[ch] = b.p_ch_max / pb;
                    prob.lower[dis] = 0.0;
                    prob.upper[dis] = b.p_dis_max / pb;
                }
            }

            // Battery costs and SoC recursion with softened bounds.
            for (j, b) in self.batteries.iter().enumerate() {
                let (eta_ch, eta_dis) = eta[j];
                let (ch, dis) = (lay.p_ch(k, b.vsc), lay.p_dis(k, b.vsc));
                prob.objective.c[ch] += 1.0 - eta_ch;
                prob.objective.c[dis] += 1.0 / eta_dis - 1.0;
                let s = lay.soc(k, j);
                let slack = lay.slack(k, j);
                let gain = cfg.t_s * pb / b.e_max;
                let mut a = SparseVec::new();
                a.push(s, 1.0);
                a.push(ch, -eta_ch * gain);
                a.push(dis, gain / eta_dis);
                let rhs = if k == 0 {
                    soc[j]
                } else {
                    a.push(lay.soc(k - 1, j), -1.0);
                    0.0
                };
                prob.eq.push(LinearEq::new(a, rhs));
                prob.lower[slack] = 0.0;
                prob.objective.c[slack] += cfg.soc_slack_penalty / pb;
                prob.quad_ineq.push(QuadIneq::linear(
                    SparseVec::from_pairs(vec![(s, -1.0), (slack, -1.0)]),
                    cfg.soc_min,
                ));
                prob.quad_ineq.push(QuadIneq::linear(
                    SparseVec::from_pairs(vec![(s, 1.0), (slack, -1.0)]),
                    -cfg.soc_max,
                ));
            }
            networks.push(net);
        }
        let _ = nb;
        Ok(HorizonProblem {
            problem: prob,
            layout: lay,
            networks,
            power_rows,
            voltage_rows,
        })
    }

    /// One receding-horizon interval. `soc` are the current estimates and
    /// `p_prev` the battery powers measured over the previous interval.
    pub fn step(
        &mut self,
        soc: &[f64],
        p_prev: &[f64],
        preds: &Predictions,
    ) -> Result<(MpcDecision, HorizonProblem), MpcError> {
        let eta = self.update_efficiencies(soc, p_prev);
        let nominal = self.nominal_voltages();
        let hp = self.build_problem(soc, &eta, preds, &nominal)?;
        let t0 = Instant::now();
        let sol = solve_with(&hp.problem, &self.solver)?;
        let solve_time = t0.elapsed().as_secs_f64();
        let usable = match sol.status {
            Status::Optimal => true,
            Status::MaxIter => hp.problem.max_violation(&sol.x) <= 1e-6,
            Status::Infeasible => false,
        };
        let mut diag = Diagnostics {
            status: sol.status,
            iterations: sol.iterations,
            solve_time,
            kkt_max: sol.kkt.max(),
            alarm: false,
        };
        self.state.soc = soc.to_vec();
        self.state.eta = eta.clone();
        let decision = if usable {
            let d = decode(&hp, &sol.x, &self.config, eta, diag);
            self.state.prev_v = Some(d.v_horizon.clone());
            self.state.last_refs = d.v_dispatch.clone();
            d
        } else {
            warn!("MPC solve ended {:?}; holding previous references", sol.status);
            diag.alarm = true;
            self.hold(eta, diag)
        };
        Ok((decision, hp))
    }

    fn hold(&self, eta: Vec<(f64, f64)>, diagnostics: Diagnostics) -> MpcDecision {
        let n_p = self.config.n_p;
        let n = self.topo.n_vsc();
        MpcDecision {
            v_dispatch: self.state.last_refs.clone(),
            v_horizon: vec![self.state.last_refs.clone(); n_p],
            p_ch: vec![vec![0.0; n]; n_p],
            p_dis: vec![vec![0.0; n]; n_p],
            soc_pred: vec![self.state.soc.clone(); n_p],
            slack: vec![vec![0.0; self.batteries.len()]; n_p],
            objective: f64::NAN,
            eta,
            diagnostics,
        }
    }
}

fn fix(prob: &mut QcqpProblem, var: usize, value: f64) {
    prob.lower[var] = value;
    prob.upper[var] = value;
}

pub fn flat(n_vsc: usize, v_ll: f64) -> DVector<f64> {
    DVector::from_fn(2 * n_vsc, |m, _| if m % 2 == 0 { v_ll } else { 0.0 })
}

/// Exact gains, converter models and loss form of a topology.
pub fn network_for(topo: &NetworkTopology) -> Result<StepNetwork, NetError> {
    let gains = steady_state_gains(topo)?;
    let models = topo
        .vscs
        .iter()
        .enumerate()
        .map(|(i, v)| vsc_static_gains(&gains, &v.lcl, i, topo.omega))
        .collect();
    let loss_form = loss_quadratic_forms(&gains, topo).total();
    Ok(StepNetwork {
        gains,
        models,
        loss_form,
    })
}

/// Converts a per-unit solution vector back into a decision.
pub fn decode(
    hp: &HorizonProblem,
    x: &[f64],
    cfg: &MpcConfig,
    eta: Vec<(f64, f64)>,
    diagnostics: Diagnostics,
) -> MpcDecision {
    let lay = hp.layout;
    let v_horizon: Vec<DVector<f64>> = (0..lay.n_p)
        .map(|k| DVector::from_iterator(2 * lay.n_vsc, lay.v_block(k).into_iter().map(|m| x[m] * cfg.v_ll)))
        .collect();
    let per_vsc = |f: &dyn Fn(usize, usize) -> usize| -> Vec<Vec<f64>> {
        (0..lay.n_p)
            .map(|k| (0..lay.n_vsc).map(|i| x[f(k, i)] * cfg.p_base).collect())
            .collect()
    };
    let per_batt = |f: &dyn Fn(usize, usize) -> usize| -> Vec<Vec<f64>> {
        (0..lay.n_p)
            .map(|k| (0..lay.n_batt).map(|j| x[f(k, j)]).collect())
            .collect()
    };
    MpcDecision {
        v_dispatch: v_horizon[0].clone(),
        p_ch: per_vsc(&|k, i| lay.p_ch(k, i)),
        p_dis: per_vsc(&|k, i| lay.p_dis(k, i)),
        soc_pred: per_batt(&|k, j| lay.soc(k, j)),
        slack: per_batt(&|k, j| lay.slack(k, j)),
        v_horizon,
        objective: hp.problem.objective_value(x) * cfg.p_base,
        eta,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voltage_and_current_bounds_for_standard_ratings() {
        let c = MpcConfig::default();
        assert!((c.v_upper_frac * c.v_ll - 456.5).abs() < 1e-9);
        assert!((c.v_lower_frac * c.v_ll - 373.5).abs() < 1e-9);
        assert!((c.i_dq_max() - 259.807_621_135).abs() < 1e-6);
    }

    #[test]
    fn layout_counts() {
        let l = Layout {
            n_vsc: 5,
            n_batt: 4,
            n_p: 30,
        };
        assert_eq!(l.core_len(), 600);
        assert_eq!(l.len(), 30 * 28);
        assert_eq!(l.slack(29, 3), l.len() - 1);
    }

    #[test]
    fn bad_config_is_rejected() {
        let c = MpcConfig {
            v_lower_frac: 1.2,
            ..MpcConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
