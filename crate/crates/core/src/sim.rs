//! Closed-loop run of the controller against the plant, plus CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use crate::mpc::{Mpc, MpcBattery, MpcError, Predictions};
use crate::netmodel::VscKind;
use crate::plant::profile::{generate_load_profile, Predictor};
use crate::plant::pv::PvArray;
use crate::plant::{Losses, Plant, PlantBattery, PlantConfig, PlantError};
use crate::scenario::{EffModeName, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Dump(String),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<EffModeName>,
    pub dump_dir: Option<PathBuf>,
}

/// True and forecast exogenous series for a run, indexed by step.
#[derive(Debug, Clone)]
pub struct Inputs {
    /// Available PV power per step, W (shared by all PV converters).
    pub pv: Vec<f64>,
    /// Total load per step, W.
    pub load: Vec<f64>,
    /// Samples preceding step 0, oldest first.
    pub pv_history: Vec<f64>,
    pub load_history: Vec<f64>,
}

impl Inputs {
    pub fn build(sc: &Scenario, steps: usize, seed: u64) -> Self {
        let w = sc.warmup();
        let array = PvArray::new(sc.file.pv.panel, sc.file.pv.nominal_w);
        let pv_all: Vec<f64> = sc
            .weather
            .iter()
            .map(|r| array.power(r.irradiance_wm2, r.temp_c))
            .collect();
        let load_all = generate_load_profile(&sc.load_base, sc.file.load_walk.step_bound, seed).values;
        Self {
            pv: pv_all[w..w + steps].to_vec(),
            load: load_all[w..w + steps].to_vec(),
            pv_history: pv_all[..w].to_vec(),
            load_history: load_all[..w].to_vec(),
        }
    }

    /// Exact future values from step `k`, repeating the last sample past the
    /// end of the data.
    pub fn perfect(series: &[f64], k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| series[(k + j).min(series.len() - 1)]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t_s: f64,
    pub soc: Vec<f64>,
    /// Applied battery power, W (positive discharging).
    pub p_batt: Vec<f64>,
    /// Planned first-interval battery power, W.
    pub p_batt_ref: Vec<f64>,
    pub q: Vec<f64>,
    pub i_rms: Vec<f64>,
    /// Output voltage magnitude per converter, per unit of V_LL.
    pub v_rms: Vec<f64>,
    /// Extremes of the dispatched references and of the bus voltages, per unit.
    pub v_ref_min: f64,
    pub v_ref_max: f64,
    pub v_bus_min: f64,
    pub v_bus_max: f64,
    pub pv_mpp: f64,
    pub pv: f64,
    pub load: f64,
    pub losses: Losses,
    pub audit: f64,
    /// Largest min(P_ch, P_dis) over batteries and horizon steps, W.
    pub overlap: f64,
    pub alarm: bool,
    pub pv_saturated: bool,
    pub batt_saturated: bool,
    pub soc_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub average_loss_kw: f64,
    pub average_network_loss_kw: f64,
    pub average_battery_loss_kw: f64,
    pub min_soc: f64,
    pub max_soc: f64,
    pub max_avg_phase_current_a: f64,
    pub min_v_rms_pu: f64,
    pub max_v_rms_pu: f64,
    pub min_v_ref_pu: f64,
    pub max_v_ref_pu: f64,
    pub min_v_bus_pu: f64,
    pub max_v_bus_pu: f64,
    pub max_audit_residual: f64,
    pub max_overlap_w: f64,
    pub alarms: usize,
    pub pv_saturated_steps: usize,
}

impl Summary {
    pub fn from_records(r: &[StepRecord]) -> Self {
        let n = r.len().max(1) as f64;
        let fold = |f: &dyn Fn(&StepRecord) -> f64, init: f64, op: fn(f64, f64) -> f64| r.iter().map(f).fold(init, op);
        let vfold = |f: &dyn Fn(&StepRecord) -> &Vec<f64>, init: f64, op: fn(f64, f64) -> f64| {
            r.iter().flat_map(|x| f(x).iter().copied()).fold(init, op)
        };
        Self {
            steps: r.len(),
            average_loss_kw: fold(&|x| x.losses.total(), 0.0, |a, b| a + b) / n / 1e3,
            average_network_loss_kw: fold(&|x| x.losses.network(), 0.0, |a, b| a + b) / n / 1e3,
            average_battery_loss_kw: fold(&|x| x.losses.battery, 0.0, |a, b| a + b) / n / 1e3,
            min_soc: vfold(&|x| &x.soc, f64::INFINITY, f64::min),
            max_soc: vfold(&|x| &x.soc, f64::NEG_INFINITY, f64::max),
            max_avg_phase_current_a: vfold(&|x| &x.i_rms, 0.0, f64::max),
            min_v_rms_pu: vfold(&|x| &x.v_rms, f64::INFINITY, f64::min),
            max_v_rms_pu: vfold(&|x| &x.v_rms, f64::NEG_INFINITY, f64::max),
            min_v_ref_pu: fold(&|x| x.v_ref_min, f64::INFINITY, f64::min),
            max_v_ref_pu: fold(&|x| x.v_ref_max, f64::NEG_INFINITY, f64::max),
            min_v_bus_pu: fold(&|x| x.v_bus_min, f64::INFINITY, f64::min),
            max_v_bus_pu: fold(&|x| x.v_bus_max, f64::NEG_INFINITY, f64::max),
            max_audit_residual: fold(&|x| x.audit, 0.0, f64::max),
            max_overlap_w: fold(&|x| x.overlap, 0.0, f64::max),
            alarms: r.iter().filter(|x| x.alarm).count(),
            pv_saturated_steps: r.iter().filter(|x| x.pv_saturated).count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub battery_buses: Vec<String>,
    pub vsc_names: Vec<String>,
    pub records: Vec<StepRecord>,
    pub summary: Summary,
    /// Convex solve time per step, s.
    pub solve_times: Vec<f64>,
    pub inputs: Inputs,
    /// SoC at the start of each step, per battery.
    pub soc_start: Vec<Vec<f64>>,
}

pub fn mpc_batteries(sc: &Scenario) -> Vec<MpcBattery> {
    sc.batteries
        .iter()
        .map(|(vsc, p)| MpcBattery {
            vsc: *vsc,
            e_max: p.e_max,
            p_ch_max: p.p_ch_max,
            p_dis_max: p.p_dis_max,
        })
        .collect()
}

pub fn plant_for(sc: &Scenario) -> Plant {
    let cfg = PlantConfig {
        v_ll: sc.file.mpc.v_ll,
        t_s: sc.file.mpc.t_s,
        pi_kp: sc.file.plant.pi_kp,
        pi_ki: sc.file.plant.pi_ki,
        pi_substeps: sc.file.plant.pi_substeps,
    };
    let batteries = sc
        .batteries
        .iter()
        .map(|(vsc, pack)| PlantBattery {
            vsc: *vsc,
            pack: pack.clone(),
        })
        .collect();
    Plant::new(sc.topo.clone(), batteries, cfg)
}

/// Runs the receding-horizon controller against the plant.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunResult, SimError> {
    let steps = opts.steps.unwrap_or(sc.file.steps);
    if steps < 1 || steps > sc.max_steps() {
        return Err(ScenarioError::Invalid(format!(
            "{steps} steps requested but the data supports 1..={}",
            sc.max_steps()
        ))
        .into());
    }
    let seed = opts.seed.unwrap_or(sc.file.seed);
    let mode = sc.efficiency_mode(opts.mode.unwrap_or(sc.file.mode))?;
    let inputs = Inputs::build(sc, steps, seed);
    let cfg = sc.file.mpc.clone();
    let n_p = cfg.n_p;
    let soc0: Vec<f64> = sc.batteries.iter().map(|b| b.1.soc).collect();
    let mut mpc = Mpc::new(sc.topo.clone(), mpc_batteries(sc), cfg.clone(), mode, soc0)?;
    let mut plant = plant_for(sc);
    let n_pv = plant.pv_indices().len();

    let mut pv_pred = Predictor::new(sc.file.predictor.window_s, cfg.t_s).map_err(ScenarioError::Invalid)?;
    let mut load_pred = pv_pred.clone();
    for (&p, &l) in inputs.pv_history.iter().zip(&inputs.load_history) {
        pv_pred.observe(p);
        load_pred.observe(l);
    }
    if let Some(dir) = &opts.dump_dir {
        std::fs::create_dir_all(dir).map_err(|source| SimError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }

    let batt_vsc: Vec<usize> = sc.batteries.iter().map(|b| b.0).collect();
    let mut p_prev = vec![0.0; batt_vsc.len()];
    let mut records = Vec::with_capacity(steps);
    let mut solve_times = Vec::with_capacity(steps);
    let mut soc_start = Vec::with_capacity(steps);
    for k in 0..steps {
        let soc = plant.soc();
        soc_start.push(soc.clone());
        let pv_f = if pv_pred.has_history() {
            pv_pred.predict(n_p)
        } else {
            vec![0.0; n_p]
        };
        let load_f = if load_pred.has_history() {
            load_pred.predict(n_p)
        } else {
            vec![0.0; n_p]
        };
        let preds = Predictions {
            p_mpp: vec![pv_f; n_pv],
            p_cpl: sc.cpls.iter().map(|c| vec![c.1; n_p]).collect(),
            load_total: load_f,
        };
        let (d, hp) = mpc.step(&soc, &p_prev, &preds)?;
        if let Some(dir) = &opts.dump_dir {
            qcqp::text::write_file(&hp.problem, &dir.join(format!("step_{k:04}.qcqp")))
                .map_err(|e| SimError::Dump(e.to_string()))?;
        }
        solve_times.push(d.diagnostics.solve_time);
        let m = plant.step(&d.v_dispatch, &vec![inputs.pv[k]; n_pv], inputs.load[k])?;
        let overlap = batt_vsc
            .iter()
            .flat_map(|&i| d.p_ch.iter().zip(&d.p_dis).map(move |(c, s)| c[i].min(s[i])))
            .fold(0.0, f64::max);
        p_prev = batt_vsc.iter().map(|&i| m.p_vsc[i]).collect();
        let n = sc.topo.n_vsc();
        let refs: Vec<f64> = (0..n)
            .map(|i| d.v_dispatch[2 * i].hypot(d.v_dispatch[2 * i + 1]) / cfg.v_ll)
            .collect();
        let buses: Vec<f64> = m.v_bus.iter().map(|v| v.magnitude() / cfg.v_ll).collect();
        let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        records.push(StepRecord {
            step: k,
            t_s: k as f64 * cfg.t_s,
            soc: m.soc.clone(),
            p_batt: p_prev.clone(),
            p_batt_ref: batt_vsc.iter().map(|&i| d.p_dis[0][i] - d.p_ch[0][i]).collect(),
            q: m.q_vsc.clone(),
            i_rms: (0..n).map(|i| m.i_rms(i)).collect(),
            v_rms: m.v_o.iter().map(|v| v.magnitude() / cfg.v_ll).collect(),
            v_ref_min: lo(&refs),
            v_ref_max: hi(&refs),
            v_bus_min: lo(&buses),
            v_bus_max: hi(&buses),
            pv_mpp: inputs.pv[k] * n_pv as f64,
            pv: m.pv_power,
            load: m.load_power,
            losses: m.losses,
            audit: m.audit_residual,
            overlap,
            alarm: d.diagnostics.alarm,
            pv_saturated: m.flags.pv_saturated,
            batt_saturated: m.flags.battery_saturated.iter().any(|&b| b),
            soc_clamped: m.flags.soc_clamped.iter().any(|&b| b),
        });
        pv_pred.observe(inputs.pv[k]);
        load_pred.observe(inputs.load[k]);
        if k % 60 == 0 {
            info!(
                "step {k}: loss {:.2} kW, solve {:.3} s",
                m.losses.total() / 1e3,
                d.diagnostics.solve_time
            );
        }
    }
    let summary = Summary::from_records(&records);
    Ok(RunResult {
        battery_buses: sc.batteries.iter().map(|b| sc.topo.vscs[b.0].bus.clone()).collect(),
        vsc_names: sc.topo.vscs.iter().map(|v| v.name.clone()).collect(),
        records,
        summary,
        solve_times,
        inputs,
        soc_start,
    })
}

/// Indices of PV converters in the topology.
pub fn pv_converters(sc: &Scenario) -> Vec<usize> {
    sc.topo
        .vscs
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VscKind::Pv)
        .map(|(i, _)| i)
        .collect()
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

pub fn trajectory_csv(r: &RunResult) -> String {
    let mut s = String::new();
    let mut head = vec!["step".to_string(), "t_s".into()];
    head.extend(r.battery_buses.iter().map(|b| format!("soc_{b}")));
    head.extend(r.battery_buses.iter().map(|b| format!("p_batt_kw_{b}")));
    head.extend(r.battery_buses.iter().map(|b| format!("p_batt_ref_kw_{b}")));
    head.extend(r.vsc_names.iter().map(|v| format!("q_kvar_{v}")));
    head.extend(r.vsc_names.iter().map(|v| format!("i_rms_a_{v}")));
    head.extend(r.vsc_names.iter().map(|v| format!("v_rms_pu_{v}")));
    head.extend(
        [
            "v_ref_min_pu",
            "v_ref_max_pu",
            "v_bus_min_pu",
            "v_bus_max_pu",
            "pv_mpp_kw",
            "pv_kw",
            "load_kw",
            "loss_filter_kw",
            "loss_line_kw",
            "loss_batt_kw",
            "loss_kw",
            "audit_residual",
            "overlap_w",
            "alarm",
            "pv_saturated",
            "batt_saturated",
            "soc_clamped",
        ]
        .map(String::from),
    );
    s.push_str(&head.join(","));
    s.push('\n');
    for x in &r.records {
        let mut row = vec![x.step.to_string(), format!("{}", x.t_s)];
        row.extend(x.soc.iter().map(|&v| num(v)));
        row.extend(x.p_batt.iter().map(|&v| num(v / 1e3)));
        row.extend(x.p_batt_ref.iter().map(|&v| num(v / 1e3)));
        row.extend(x.q.iter().map(|&v| num(v / 1e3)));
        row.extend(x.i_rms.iter().map(|&v| num(v)));
        row.extend(x.v_rms.iter().map(|&v| num(v)));
        row.extend(
            [
                x.v_ref_min,
                x.v_ref_max,
                x.v_bus_min,
                x.v_bus_max,
                x.pv_mpp / 1e3,
                x.pv / 1e3,
                x.load / 1e3,
                x.losses.filter / 1e3,
                x.losses.line / 1e3,
                x.losses.battery / 1e3,
                x.losses.total() / 1e3,
            ]
            .map(num),
        );
        row.push(format!("{:.3e}", x.audit));
        row.push(format!("{:.3}", x.overlap));
        for b in [x.alarm, x.pv_saturated, x.batt_saturated, x.soc_clamped] {
            row.push(u8::from(b).to_string());
        }
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn summary_csv(s: &Summary) -> String {
    let mut out = String::from("metric,value\n");
    let rows: [(&str, String); 17] = [
        ("steps", s.steps.to_string()),
        ("average_loss_kw", num(s.average_loss_kw)),
        ("average_network_loss_kw", num(s.average_network_loss_kw)),
        ("average_battery_loss_kw", num(s.average_battery_loss_kw)),
        ("min_soc", num(s.min_soc)),
        ("max_soc", num(s.max_soc)),
        ("max_avg_phase_current_a", num(s.max_avg_phase_current_a)),
        ("min_v_rms_pu", num(s.min_v_rms_pu)),
        ("max_v_rms_pu", num(s.max_v_rms_pu)),
        ("min_v_ref_pu", num(s.min_v_ref_pu)),
        ("max_v_ref_pu", num(s.max_v_ref_pu)),
        ("min_v_bus_pu", num(s.min_v_bus_pu)),
        ("max_v_bus_pu", num(s.max_v_bus_pu)),
        ("max_audit_residual", format!("{:.3e}", s.max_audit_residual)),
        ("max_overlap_w", format!("{:.3}", s.max_overlap_w)),
        ("alarms", s.alarms.to_string()),
        ("pv_saturated_steps", s.pv_saturated_steps.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

pub fn timing_csv(times: &[f64]) -> String {
    let mut out = String::from("step,solve_time_s\n");
    for (k, t) in times.iter().enumerate() {
        let _ = writeln!(out, "{k},{t:.6}");
    }
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    let _ = writeln!(out, "mean,{mean:.6}");
    out
}

pub fn write_file(path: &Path, text: &str) -> Result<(), SimError> {
    std::fs::write(path, text).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes trajectory.csv, summary.csv and timing.csv into `dir`.
pub fn write_outputs(dir: &Path, r: &RunResult) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_file(&dir.join("trajectory.csv"), &trajectory_csv(r))?;
    write_file(&dir.join("summary.csv"), &summary_csv(&r.summary))?;
    write_file(&dir.join("timing.csv"), &timing_csv(&r.solve_times))
}
