//! Ground-truth microgrid: exact static network at the true loads, PV
//! power correction, nonlinear batteries and a per-step energy audit.

pub mod profile;
pub mod pv;

use log::warn;
use nalgebra::DVector;

use crate::battery::{efficiency, ocv_and_resistance, solve_cell_current, BatteryError, BatteryPack};
use crate::dq::DqVec;
use crate::netmodel::{load_resistance, steady_state_gains, NetError, NetworkTopology, StaticGains, VscKind};
use crate::vsc::{vsc_static_gains, VscStaticModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConfig {
    pub v_ll: f64,
    pub t_s: f64,
    /// PV power correction, V per W.
    pub pi_kp: f64,
    /// V per (W s).
    pub pi_ki: f64,
    /// PI sub-steps per sampling interval.
    pub pi_substeps: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            v_ll: 415.0,
            t_s: 60.0,
            pi_kp: 1e-4,
            pi_ki: 1e-3,
            pi_substeps: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantBattery {
    pub vsc: usize,
    pub pack: BatteryPack,
}

/// Physical state owned by the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub step: usize,
    pub batteries: Vec<PlantBattery>,
    /// Applied output voltages after PV correction, stacked d–q.
    pub v_applied: DVector<f64>,
    /// Pack terminal voltage per battery.
    pub v_dc: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Losses {
    pub filter: f64,
    pub line: f64,
    pub battery: f64,
}

impl Losses {
    pub fn total(&self) -> f64 {
        self.filter + self.line + self.battery
    }

    pub fn network(&self) -> f64 {
        self.filter + self.line
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Flags {
    /// No PV output voltage within ±10% of nominal reproduces the
    /// available power.
    pub pv_saturated: bool,
    /// Requested battery power beyond the deliverable limit.
    pub battery_saturated: Vec<bool>,
    /// True SoC hit 0 or 1 and was clamped.
    pub soc_clamped: Vec<bool>,
}

/// Everything observable after one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub step: usize,
    /// SoC at the end of the interval.
    pub soc: Vec<f64>,
    /// DC-side power per VSC (W, positive into the network).
    pub p_vsc: Vec<f64>,
    pub v_o: Vec<DqVec>,
    pub i_o: Vec<DqVec>,
    pub i_l: Vec<DqVec>,
    pub q_vsc: Vec<f64>,
    pub v_bus: Vec<DqVec>,
    pub load_power: f64,
    pub pv_power: f64,
    pub losses: Losses,
    /// Exact efficiency used per battery this interval.
    pub eta: Vec<f64>,
    pub audit_residual: f64,
    pub flags: Flags,
}

impl Measurement {
    /// RMS phase current of the inductor of VSC `i`.
    pub fn i_rms(&self, i: usize) -> f64 {
        self.i_l[i].magnitude() / 3f64.sqrt()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error(transparent)]
    Network(#[from] NetError),
    #[error("reference vector has {got} entries, expected {want}")]
    Dimension { got: usize, want: usize },
    #[error("{0} PV powers supplied for {1} PV converters")]
    PvCount(usize, usize),
}

/// Static network, VSC models and PV index at a given load level.
pub struct NetworkAtLoad {
    pub gains: StaticGains,
    pub models: Vec<VscStaticModel>,
    pub topo: NetworkTopology,
}

impl NetworkAtLoad {
    /// Total load `p_total` (W at nominal voltage) split evenly over all
    /// loads of the topology.
    pub fn new(base: &NetworkTopology, p_total: f64, v_ll: f64) -> Result<Self, NetError> {
        let n = base.loads.len().max(1) as f64;
        let r: Vec<f64> = base.loads.iter().map(|_| load_resistance(p_total / n, v_ll)).collect();
        let topo = base.with_load_resistances(&r);
        let gains = steady_state_gains(&topo)?;
        let models = topo
            .vscs
            .iter()
            .enumerate()
            .map(|(i, v)| vsc_static_gains(&gains, &v.lcl, i, topo.omega))
            .collect();
        Ok(Self { gains, models, topo })
    }
}

pub struct Plant {
    pub topo: NetworkTopology,
    pub config: PlantConfig,
    pub state: PlantState,
    pv: Vec<usize>,
}

impl Plant {
    pub fn new(topo: NetworkTopology, batteries: Vec<PlantBattery>, config: PlantConfig) -> Self {
        let n = topo.n_vsc();
        let pv = topo
            .vscs
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VscKind::Pv)
            .map(|(i, _)| i)
            .collect();
        let v_dc = batteries
            .iter()
            .map(|b| b.pack.n_series as f64 * ocv_and_resistance(b.pack.soc, &b.pack.coeffs).0)
            .collect();
        let mut v0 = DVector::zeros(2 * n);
        for i in 0..n {
            v0[2 * i] = config.v_ll;
        }
        Self {
            topo,
            config,
            state: PlantState {
                step: 0,
                batteries,
                v_applied: v0,
                v_dc,
            },
            pv,
        }
    }

    pub fn pv_indices(&self) -> &[usize] {
        &self.pv
    }

    pub fn soc(&self) -> Vec<f64> {
        self.state.batteries.iter().map(|b| b.pack.soc).collect()
    }

    /// Applies `v_ref` for one interval with available PV power `pv_mpp` (one
    /// entry per PV converter) and total nominal load `load_w`.
    pub fn step(&mut self, v_ref: &DVector<f64>, pv_mpp: &[f64], load_w: f64) -> Result<Measurement, PlantError> {
        let n = self.topo.n_vsc();
        if v_ref.len() != 2 * n {
            return Err(PlantError::Dimension {
                got: v_ref.len(),
                want: 2 * n,
            });
        }
        if pv_mpp.len() != self.pv.len() {
            return Err(PlantError::PvCount(pv_mpp.len(), self.pv.len()));
        }
        let net = NetworkAtLoad::new(&self.topo, load_w, self.config.v_ll)?;
        let mut v = v_ref.clone();
        let mut flags = Flags {
            battery_saturated: vec![false; self.state.batteries.len()],
            soc_clamped: vec![false; self.state.batteries.len()],
            ..Flags::default()
        };
        for (&i, &p_mpp) in self.pv.iter().zip(pv_mpp) {
            let hit = correct_pv(&net.models[i], &mut v, i, p_mpp, &self.config);
            let mag = DqVec::new(v[2 * i], v[2 * i + 1]).magnitude() / self.config.v_ll;
            if !hit || !(0.9 - 1e-9..=1.1 + 1e-9).contains(&mag) {
                flags.pv_saturated = true;
            }
        }
        self.evaluate(&net, v, flags, true)
    }

    /// Evaluates applied voltages `v` without PV correction, advancing the
    /// batteries if `advance`.
    pub fn evaluate(
        &mut self,
        net: &NetworkAtLoad,
        v: DVector<f64>,
        mut flags: Flags,
        advance: bool,
    ) -> Result<Measurement, PlantError> {
        let n = self.topo.n_vsc();
        let g = &net.gains;
        let t = &net.topo;
        let stacked = |m: &nalgebra::DMatrix<f64>, k: usize| {
            let x = m.rows(2 * k, 2) * &v;
            DqVec::new(x[0], x[1])
        };
        let v_o: Vec<DqVec> = (0..n).map(|i| DqVec::new(v[2 * i], v[2 * i + 1])).collect();
        let i_o: Vec<DqVec> = (0..n).map(|i| stacked(&g.g_io, i)).collect();
        let i_l: Vec<DqVec> = net.models.iter().map(|m| m.inductor_current(&v)).collect();
        let p_vsc: Vec<f64> = net.models.iter().map(|m| m.power(&v)).collect();
        let v_bus: Vec<DqVec> = (0..t.buses.len()).map(|b| stacked(&g.g_vbus, b)).collect();
        let q_vsc: Vec<f64> = v_o.iter().zip(&i_o).map(|(v, i)| v.reactive(i)).collect();

        let mut losses = Losses::default();
        for (i, s) in t.vscs.iter().enumerate() {
            losses.filter += s.lcl.r_f * i_l[i].magnitude().powi(2) + s.lcl.r_c * i_o[i].magnitude().powi(2);
        }
        for (j, l) in t.lines.iter().enumerate() {
            losses.line += l.r * stacked(&g.g_iline, j).magnitude().powi(2);
        }
        let mut load_power = 0.0;
        for (j, l) in t.loads.iter().enumerate() {
            if l.r.is_finite() {
                load_power += l.r * stacked(&g.g_iload, j).magnitude().powi(2);
            }
        }
        let supplied: f64 = p_vsc.iter().sum();
        let scale = p_vsc.iter().map(|p| p.abs()).sum::<f64>().max(load_power).max(1.0);
        let audit_residual = (supplied - load_power - losses.network()).abs() / scale;
        let pv_power = self.pv.iter().map(|&i| p_vsc[i]).sum();

        let t_s = self.config.t_s;
        let mut soc = Vec::with_capacity(self.state.batteries.len());
        let mut eta = Vec::with_capacity(self.state.batteries.len());
        let mut v_dc = Vec::with_capacity(self.state.batteries.len());
        for (j, b) in self.state.batteries.iter_mut().enumerate() {
            let pack = &mut b.pack;
            let mut p = p_vsc[b.vsc];
            let i_cell = match solve_cell_current(pack.soc, p, pack) {
                Ok(i) => i,
                Err(BatteryError::PowerBeyondLimit { max, .. }) => {
                    warn!(
                        "battery at VSC {} asked for {p:.0} W beyond {max:.0} W; saturated",
                        b.vsc
                    );
                    flags.battery_saturated[j] = true;
                    p = max;
                    solve_cell_current(pack.soc, p, pack).unwrap_or_else(|_| {
                        let (v, r) = ocv_and_resistance(pack.soc, &pack.coeffs);
                        v / (2.0 * r)
                    })
                }
                Err(e) => unreachable!("{e}"),
            };
            let e = efficiency(pack.soc, p, pack).unwrap_or(0.5);
            losses.battery += pack.resistive_loss(pack.soc, i_cell);
            v_dc.push(pack.dc_voltage(pack.soc, i_cell));
            let mut next = if p <= 0.0 {
                pack.soc - e * t_s * p / pack.e_max
            } else {
                pack.soc - t_s * p / (e * pack.e_max)
            };
            if !(0.0..=1.0).contains(&next) {
                flags.soc_clamped[j] = true;
                next = next.clamp(0.0, 1.0);
            }
            if advance {
                pack.soc = next;
            }
            soc.push(next);
            eta.push(e);
        }
        if advance {
            self.state.step += 1;
            self.state.v_applied = v.clone();
            self.state.v_dc = v_dc;
        }
        Ok(Measurement {
            step: self.state.step,
            soc,
            p_vsc,
            v_o,
            i_o,
            i_l,
            q_vsc,
            v_bus,
            load_power,
            pv_power,
            losses,
            eta,
            audit_residual,
            flags,
        })
    }
}

/// Adjusts the d-axis reference of PV converter `i` until its DC power
/// equals `p_mpp`: a PI loop over sub-steps, finished by Newton on the exact
/// quadratic. Returns false if no voltage achieves `p_mpp`.
fn correct_pv(model: &VscStaticModel, v: &mut DVector<f64>, i: usize, p_mpp: f64, cfg: &PlantConfig) -> bool {
    let k = 2 * i;
    let x_ref = v[k];
    let power_at = |x: f64, v: &mut DVector<f64>| {
        v[k] = x;
        model.power(v)
    };
    let dt = cfg.t_s / cfg.pi_substeps.max(1) as f64;
    let mut integral = 0.0;
    let mut x = x_ref;
    for _ in 0..cfg.pi_substeps {
        let e = p_mpp - power_at(x, v);
        integral += e * dt;
        x = x_ref + cfg.pi_kp * e + cfg.pi_ki * integral;
    }
    // P(x) = a x² + b x + c exactly.
    let p0 = power_at(x, v);
    let pp = power_at(x + 1.0, v);
    let pm = power_at(x - 1.0, v);
    let a = 0.5 * (pp + pm - 2.0 * p0);
    let slope = 0.5 * (pp - pm);
    let disc = slope * slope - 4.0 * a * (p0 - p_mpp);
    if disc < 0.0 {
        // Closest achievable point: the vertex.
        v[k] = if a != 0.0 { x - slope / (2.0 * a) } else { x };
        return false;
    }
    // Root of a d² + slope d + (p0 − p_mpp) = 0 closest to the PI result.
    let c = p0 - p_mpp;
    let q = -0.5 * (slope + slope.signum() * disc.sqrt());
    let d1 = if q != 0.0 { c / q } else { 0.0 };
    let d2 = if a != 0.0 { q / a } else { d1 };
    let mut x = x + if d1.abs() <= d2.abs() { d1 } else { d2 };
    for _ in 0..3 {
        let p = power_at(x, v);
        let dp = 0.5 * (power_at(x + 1e-3, v) - power_at(x - 1e-3, v)) / 1e-3;
        if dp == 0.0 {
            break;
        }
        x -= (p - p_mpp) / dp;
    }
    v[k] = x;
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{LclParams, Line, Load, VscSpec, DEFAULT_VIRTUAL_RESISTANCE};

    fn two_bus() -> NetworkTopology {
        NetworkTopology {
            buses: vec!["a".into(), "b".into()],
            lines: vec![Line {
                from: "a".into(),
                to: "b".into(),
                r: 0.05,
                l: 1e-4,
            }],
            loads: vec![
                Load {
                    bus: "a".into(),
                    r: 10.0,
                    l: 0.0,
                },
                Load {
                    bus: "b".into(),
                    r: 10.0,
                    l: 0.0,
                },
            ],
            vscs: vec![
                VscSpec {
                    name: "pv".into(),
                    bus: "a".into(),
                    kind: VscKind::Pv,
                    lcl: LclParams::standard(),
                },
                VscSpec {
                    name: "bat".into(),
                    bus: "b".into(),
                    kind: VscKind::Battery,
                    lcl: LclParams::standard(),
                },
            ],
            omega: 2.0 * std::f64::consts::PI * 50.0,
            virtual_resistance: DEFAULT_VIRTUAL_RESISTANCE,
        }
    }

    fn plant() -> Plant {
        Plant::new(
            two_bus(),
            vec![PlantBattery {
                vsc: 1,
                pack: BatteryPack::standard(0.6),
            }],
            PlantConfig::default(),
        )
    }

    #[test]
    fn pv_converter_delivers_available_power() {
        let mut p = plant();
        let v = DVector::from_vec(vec![415.0, 0.0, 415.0, 0.0]);
        let m = p.step(&v, &[2e4], 3e4).unwrap();
        assert!((m.p_vsc[0] - 2e4).abs() < 1e-6 * 2e4, "{}", m.p_vsc[0]);
        assert!(!m.flags.pv_saturated);
        assert!(m.audit_residual < 1e-9);
        // Only the d-axis reference of the PV converter moves.
        assert_eq!(p.state.v_applied[1], 0.0);
        assert_eq!(p.state.v_applied[2], 415.0);
    }

    #[test]
    fn impossible_pv_power_is_flagged() {
        let mut p = plant();
        let v = DVector::from_vec(vec![415.0, 0.0, 415.0, 0.0]);
        let m = p.step(&v, &[5e7], 3e4).unwrap();
        assert!(m.flags.pv_saturated);
    }

    #[test]
    fn dimension_errors() {
        let mut p = plant();
        assert!(p.step(&DVector::zeros(2), &[0.0], 0.0).is_err());
        assert!(p.step(&DVector::zeros(4), &[], 0.0).is_err());
    }
}
