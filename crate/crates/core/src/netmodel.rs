//! d–q network model: state space of the passive network between the VSC
//! filter capacitors, steady-state gains and loss quadratic forms.
//!
//! Every VSC drives its filter-capacitor voltage `v_o`; the coupling
//! inductor `(r_c, L_c)` connects it to its bus. Lines and loads are RL
//! branches. With the d–q convention `x = d + jq`, an RL branch obeys
//! `v = (R + jωL) i` in steady state and
//!
//! ```text
//! L di/dt = Δv − R i + ωL J i,   J = [[0, 1], [−1, 0]]
//! ```
//!
//! in the time domain.
//!
//! In the state-space form, bus voltages are algebraic. They are closed by a
//! virtual resistance to ground at each bus (together with any purely
//! resistive loads there). A VSC with zero coupling impedance makes its bus
//! a voltage-source bus, whose voltage is the VSC input directly; its output
//! current is then an algebraic output rather than a state.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_VIRTUAL_RESISTANCE: f64 = 1e4;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{element} refers to unknown bus `{bus}`")]
    UnknownBus { element: String, bus: String },
    #[error("more than one VSC at bus `{0}`")]
    DuplicateVscBus(String),
    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),
    #[error("{element}: {msg}")]
    InvalidParameter { element: String, msg: String },
    #[error("{0} has zero inductance and cannot be a state")]
    ZeroInductance(String),
    #[error("bus `{0}` is not connected to the rest of the network")]
    Disconnected(String),
    #[error("voltage of bus `{0}` is undetermined (no shunt path)")]
    UndeterminedBusVoltage(String),
    #[error("singular nodal admittance matrix")]
    Singular,
    #[error("topology file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LclParams {
    pub r_f: f64,
    pub l_f: f64,
    pub c_f: f64,
    pub r_c: f64,
    pub l_c: f64,
    #[serde(default = "default_am")]
    pub a_m: f64,
    #[serde(default = "default_vdc")]
    pub v_dc_nominal: f64,
}

fn default_am() -> f64 {
    0.5
}

fn default_vdc() -> f64 {
    900.0
}

impl LclParams {
    /// Filter of the bundled scenario's converters.
    pub fn standard() -> Self {
        Self {
            r_f: 0.15,
            l_f: 3.8e-3,
            c_f: 680e-6,
            r_c: 0.05,
            l_c: 300e-6,
            a_m: 0.5,
            v_dc_nominal: 900.0,
        }
    }

    /// Zero coupling impedance: the VSC regulates its bus voltage directly.
    pub fn is_voltage_source(&self) -> bool {
        self.r_c == 0.0 && self.l_c == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VscKind {
    Battery,
    Pv,
    Cpl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub r: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: String,
    /// Series resistance; `inf` is an open circuit.
    pub r: f64,
    #[serde(default)]
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VscSpec {
    pub name: String,
    pub bus: String,
    pub kind: VscKind,
    pub lcl: LclParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub buses: Vec<String>,
    pub lines: Vec<Line>,
    pub loads: Vec<Load>,
    pub vscs: Vec<VscSpec>,
    /// Electrical angular frequency, rad/s.
    pub omega: f64,
    /// Virtual resistance to ground used to close bus voltages in the state
    /// space (and optionally in the nodal gains).
    pub virtual_resistance: f64,
}

#[derive(Debug, Deserialize)]
struct TopologyFile {
    frequency_hz: f64,
    #[serde(default)]
    virtual_resistance_ohm: Option<f64>,
    buses: Vec<String>,
    #[serde(default)]
    lines: Vec<LineRecord>,
    #[serde(default)]
    loads: Vec<LoadRecord>,
    vscs: Vec<VscRecord>,
}

#[derive(Debug, Deserialize)]
struct LineRecord {
    from: String,
    to: String,
    r_ohm: f64,
    l_henry: f64,
}

#[derive(Debug, Deserialize)]
struct LoadRecord {
    bus: String,
    r_ohm: f64,
    #[serde(default)]
    l_henry: f64,
}

#[derive(Debug, Deserialize)]
struct VscRecord {
    name: Option<String>,
    bus: String,
    kind: VscKind,
    #[serde(flatten)]
    lcl: LclParams,
}

impl NetworkTopology {
    pub fn from_toml_str(text: &str) -> Result<Self, NetError> {
        let f: TopologyFile = toml::from_str(text).map_err(|e| NetError::Parse(e.to_string()))?;
        let topo = Self {
            buses: f.buses,
            lines: f
                .lines
                .into_iter()
                .map(|l| Line {
                    from: l.from,
                    to: l.to,
                    r: l.r_ohm,
                    l: l.l_henry,
                })
                .collect(),
            loads: f
                .loads
                .into_iter()
                .map(|l| Load {
                    bus: l.bus,
                    r: l.r_ohm,
                    l: l.l_henry,
                })
                .collect(),
            vscs: f
                .vscs
                .into_iter()
                .map(|v| VscSpec {
                    name: v
                        .name
                        .unwrap_or_else(|| format!("{:?}_{}", v.kind, v.bus).to_lowercase()),
                    bus: v.bus,
                    kind: v.kind,
                    lcl: v.lcl,
                })
                .collect(),
            omega: 2.0 * std::f64::consts::PI * f.frequency_hz,
            virtual_resistance: f.virtual_resistance_ohm.unwrap_or(DEFAULT_VIRTUAL_RESISTANCE),
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn from_file(path: &Path) -> Result<Self, NetError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn n_vsc(&self) -> usize {
        self.vscs.len()
    }

    pub fn bus_index(&self, bus: &str) -> Option<usize> {
        self.buses.iter().position(|b| b == bus)
    }

    pub fn vsc_at(&self, bus: &str) -> Option<usize> {
        self.vscs.iter().position(|v| v.bus == bus)
    }

    /// Copy with the load resistances replaced (inductances kept).
    pub fn with_load_resistances(&self, r: &[f64]) -> Self {
        assert_eq!(r.len(), self.loads.len());
        let mut t = self.clone();
        for (load, r) in t.loads.iter_mut().zip(r) {
            load.r = *r;
        }
        t
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let mut seen = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if seen.insert(b.as_str(), i).is_some() {
                return Err(NetError::DuplicateBus(b.clone()));
            }
        }
        let check_bus = |element: String, bus: &str| {
            if seen.contains_key(bus) {
                Ok(())
            } else {
                Err(NetError::UnknownBus {
                    element,
                    bus: bus.to_string(),
                })
            }
        };
        let invalid = |element: String, msg: &str| NetError::InvalidParameter {
            element,
            msg: msg.to_string(),
        };
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(invalid("network".into(), "frequency must be positive"));
        }
        if !(self.virtual_resistance > 0.0) {
            return Err(invalid("network".into(), "virtual resistance must be positive"));
        }
        for (j, l) in self.lines.iter().enumerate() {
            let name = line_name(j, l);
            check_bus(name.clone(), &l.from)?;
            check_bus(name.clone(), &l.to)?;
            if l.from == l.to {
                return Err(invalid(name, "line connects a bus to itself"));
            }
            if !(l.r > 0.0 && l.r.is_finite()) {
                return Err(invalid(name, "resistance must be positive"));
            }
            if !(l.l >= 0.0 && l.l.is_finite()) {
                return Err(invalid(name, "inductance must be non-negative"));
            }
        }
        for (j, l) in self.loads.iter().enumerate() {
            let name = format!("load {j} at bus {}", l.bus);
            check_bus(name.clone(), &l.bus)?;
            if !(l.r > 0.0) {
                return Err(invalid(name, "resistance must be positive"));
            }
            if !(l.l >= 0.0 && l.l.is_finite()) {
                return Err(invalid(name, "inductance must be non-negative"));
            }
            if l.r.is_infinite() && l.l > 0.0 {
                return Err(invalid(name, "open-circuit load cannot carry an inductance"));
            }
        }
        let mut vsc_buses = std::collections::HashSet::new();
        for v in &self.vscs {
            let name = format!("VSC {}", v.name);
            check_bus(name.clone(), &v.bus)?;
            if !vsc_buses.insert(v.bus.as_str()) {
                return Err(NetError::DuplicateVscBus(v.bus.clone()));
            }
            let p = &v.lcl;
            let vals = [p.r_f, p.l_f, p.c_f, p.r_c, p.l_c, p.a_m, p.v_dc_nominal];
            if vals.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(invalid(name, "filter parameters must be finite and non-negative"));
            }
        }
        if self.vscs.is_empty() {
            return Err(invalid("network".into(), "at least one VSC is required"));
        }
        // Connectivity over lines.
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let (a, b) = (seen[l.from.as_str()], seen[l.to.as_str()]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(a) = queue.pop_front() {
            for &b in &adj[a] {
                if !visited[b] {
                    visited[b] = true;
                    queue.push_back(b);
                }
            }
        }
        if let Some(b) = visited.iter().position(|v| !v) {
            return Err(NetError::Disconnected(self.buses[b].clone()));
        }
        Ok(())
    }
}

fn line_name(j: usize, l: &Line) -> String {
    format!("line {j} ({}-{})", l.from, l.to)
}

/// Real 2×2 block of multiplication by a complex number.
fn complex_block(c: Complex<f64>) -> [[f64; 2]; 2] {
    [[c.re, -c.im], [c.im, c.re]]
}

fn expand_complex(m: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * m.nrows(), 2 * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let b = complex_block(m[(i, j)]);
            for a in 0..2 {
                for c in 0..2 {
                    out[(2 * i + a, 2 * j + c)] = b[a][c];
                }
            }
        }
    }
    out
}

/// `J = [[0, 1], [−1, 0]]`.
const J: [[f64; 2]; 2] = [[0.0, 1.0], [-1.0, 0.0]];

#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a_net: DMatrix<f64>,
    pub b_net: DMatrix<f64>,
    pub state_labels: Vec<String>,
    /// Stacked currents `[i_o; i_load; i_line] = c_out x + d_out v`.
    /// For a network with inductive loads and coupling everywhere this is a
    /// plain selection of the states.
    pub c_out: DMatrix<f64>,
    pub d_out: DMatrix<f64>,
}

impl StateSpace {
    /// Steady-state map from stacked VSC voltages to stacked currents,
    /// `C (−A)⁻¹ B + D`.
    pub fn steady_state_currents(&self) -> Result<DMatrix<f64>, NetError> {
        let minus_a = -self.a_net.clone();
        let x = minus_a.lu().solve(&self.b_net).ok_or(NetError::Singular)?;
        Ok(&self.c_out * x + &self.d_out)
    }

    /// Real parts of the eigenvalues of `A`. `A` is the real 2×2-block form
    /// of a complex matrix (every block is `a I + b J`), so its spectrum is
    /// that of the half-size complex matrix together with the conjugates.
    /// The real QR iteration on the full matrix converges poorly on these
    /// stiff, exactly paired spectra.
    pub fn eigen_real_parts(&self) -> Vec<f64> {
        let a = &self.a_net;
        let n = a.nrows() / 2;
        let ac = DMatrix::from_fn(n, n, |i, j| Complex::new(a[(2 * i, 2 * j)], a[(2 * i + 1, 2 * j)]));
        debug_assert!(expand_complex(&ac) == *a);
        let schur =
            nalgebra::linalg::Schur::try_new(ac, f64::EPSILON, 100_000).expect("complex Schur iteration converges");
        let ev = schur.eigenvalues().expect("triangular complex Schur form");
        ev.iter().flat_map(|l| [l.re, l.re]).collect()
    }

    pub fn is_hurwitz(&self) -> bool {
        self.eigen_real_parts().iter().all(|r| *r < 0.0)
    }

    /// Slowest time constant `1 / min |Re λ|`.
    pub fn slowest_time_constant(&self) -> f64 {
        let slowest = self
            .eigen_real_parts()
            .iter()
            .fold(f64::INFINITY, |m, r| m.min(r.abs()));
        1.0 / slowest
    }

    /// Integrates `ẋ = A x + B v` from `x0` with constant input by backward
    /// Euler, which damps the very fast modes the virtual resistance
    /// introduces. Returns the final state.
    pub fn integrate(&self, x0: &DVector<f64>, v: &DVector<f64>, t_end: f64, dt: f64) -> DVector<f64> {
        let n = self.a_net.nrows();
        let steps = (t_end / dt).ceil().max(1.0) as usize;
        let h = t_end / steps as f64;
        let lhs = DMatrix::<f64>::identity(n, n) - &self.a_net * h;
        let forcing = &self.b_net * v * h;
        let lu = lhs.lu();
        let mut x = x0.clone();
        for _ in 0..steps {
            x = lu
                .solve(&(&x + &forcing))
                .expect("implicit step matrix is nonsingular for a stable network");
        }
        x
    }

    pub fn outputs(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.c_out * x + &self.d_out * v
    }
}

/// Linear expression in (scalar) states and VSC inputs; multiplied by the
/// 2×2 identity when expanded.
#[derive(Debug, Clone, Default)]
struct Expr {
    states: Vec<(usize, f64)>,
    inputs: Vec<(usize, f64)>,
}

impl Expr {
    fn scaled(&self, k: f64) -> Expr {
        Expr {
            states: self.states.iter().map(|(i, v)| (*i, v * k)).collect(),
            inputs: self.inputs.iter().map(|(i, v)| (*i, v * k)).collect(),
        }
    }

    fn add(&mut self, other: &Expr, k: f64) {
        self.states.extend(other.states.iter().map(|(i, v)| (*i, v * k)));
        self.inputs.extend(other.inputs.iter().map(|(i, v)| (*i, v * k)));
    }
}

#[derive(Debug, Clone, Copy)]
enum Current {
    State(usize),
    /// Resistive load current, `v_bus / R`.
    Resistive {
        bus: usize,
        g: f64,
    },
    /// Output current of a voltage-source VSC, from KCL at its bus.
    SourceKcl(usize),
}

/// Builds the network state space.
pub fn build_dq_state_space(topo: &NetworkTopology) -> Result<StateSpace, NetError> {
    topo.validate()?;
    let nb = topo.buses.len();
    let nv = topo.n_vsc();
    let bus = |b: &str| topo.bus_index(b).unwrap();

    let mut labels = Vec::new();
    // (inductance, resistance, from expression, to expression) per state
    // branch, filled once bus expressions are known.
    enum Terminal {
        Input(usize),
        Bus(usize),
        Ground,
    }
    let mut branches: Vec<(f64, f64, Terminal, Terminal)> = Vec::new();
    let mut vsc_current = Vec::with_capacity(nv);
    let mut vs_bus: Vec<Option<usize>> = vec![None; nb];
    // Scalar state inflows per bus: (state, sign).
    let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    let mut shunt_g = vec![topo.virtual_resistance.recip(); nb];

    for (k, v) in topo.vscs.iter().enumerate() {
        let b = bus(&v.bus);
        if v.lcl.is_voltage_source() {
            vs_bus[b] = Some(k);
            vsc_current.push(Current::SourceKcl(k));
            continue;
        }
        if v.lcl.l_c == 0.0 {
            return Err(NetError::ZeroInductance(format!("coupling inductor of VSC {}", v.name)));
        }
        let s = branches.len();
        branches.push((v.lcl.l_c, v.lcl.r_c, Terminal::Input(k), Terminal::Bus(b)));
        labels.push(format!("i_o[{}]", v.name));
        inflow[b].push((s, 1.0));
        vsc_current.push(Current::State(s));
    }
    for b in 0..nb {
        if vs_bus[b].is_some() {
            shunt_g[b] = 0.0;
        }
    }
    let mut load_current = Vec::with_capacity(topo.loads.len());
    for (j, l) in topo.loads.iter().enumerate() {
        let b = bus(&l.bus);
        if l.l == 0.0 {
            let g = if l.r.is_finite() { 1.0 / l.r } else { 0.0 };
            if vs_bus[b].is_none() {
                shunt_g[b] += g;
            }
            load_current.push(Current::Resistive { bus: b, g });
        } else {
            let s = branches.len();
            branches.push((l.l, l.r, Terminal::Bus(b), Terminal::Ground));
            labels.push(format!("i_load[{j}@{}]", l.bus));
            inflow[b].push((s, -1.0));
            load_current.push(Current::State(s));
        }
    }
    let mut line_current = Vec::with_capacity(topo.lines.len());
    for (j, l) in topo.lines.iter().enumerate() {
        if l.l == 0.0 {
            return Err(NetError::ZeroInductance(line_name(j, l)));
        }
        let (a, b) = (bus(&l.from), bus(&l.to));
        let s = branches.len();
        branches.push((l.l, l.r, Terminal::Bus(a), Terminal::Bus(b)));
        labels.push(format!("i_line[{}-{}]", l.from, l.to));
        inflow[a].push((s, -1.0));
        inflow[b].push((s, 1.0));
        line_current.push(Current::State(s));
    }

    // Bus voltage expressions.
    let mut vbus = Vec::with_capacity(nb);
    for b in 0..nb {
        if let Some(k) = vs_bus[b] {
            vbus.push(Expr {
                states: Vec::new(),
                inputs: vec![(k, 1.0)],
            });
        } else {
            if shunt_g[b] <= 0.0 {
                return Err(NetError::UndeterminedBusVoltage(topo.buses[b].clone()));
            }
            vbus.push(
                Expr {
                    states: inflow[b].clone(),
                    inputs: Vec::new(),
                }
                .scaled(1.0 / shunt_g[b]),
            );
        }
    }
    let terminal = |t: &Terminal| -> Expr {
        match *t {
            Terminal::Input(k) => Expr {
                states: Vec::new(),
                inputs: vec![(k, 1.0)],
            },
            Terminal::Bus(b) => vbus[b].clone(),
            Terminal::Ground => Expr::default(),
        }
    };

    let ns = branches.len();
    let mut a = DMatrix::zeros(2 * ns, 2 * ns);
    let mut bm = DMatrix::zeros(2 * ns, 2 * nv);
    for (s, (l, r, from, to)) in branches.iter().enumerate() {
        let mut drive = terminal(from);
        drive.add(&terminal(to), -1.0);
        for &(t, c) in &drive.states {
            for d in 0..2 {
                a[(2 * s + d, 2 * t + d)] += c / l;
            }
        }
        for &(k, c) in &drive.inputs {
            for d in 0..2 {
                bm[(2 * s + d, 2 * k + d)] += c / l;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let diag = if i == j { -r / l } else { 0.0 };
                a[(2 * s + i, 2 * s + j)] += diag + topo.omega * J[i][j];
            }
        }
    }

    // Output map.
    let n_out = nv + topo.loads.len() + topo.lines.len();
    let mut c_out = DMatrix::zeros(2 * n_out, 2 * ns);
    let mut d_out = DMatrix::zeros(2 * n_out, 2 * nv);
    let put = |row: usize, e: &Expr, c_out: &mut DMatrix<f64>, d_out: &mut DMatrix<f64>| {
        for &(t, c) in &e.states {
            for d in 0..2 {
                c_out[(2 * row + d, 2 * t + d)] += c;
            }
        }
        for &(k, c) in &e.inputs {
            for d in 0..2 {
                d_out[(2 * row + d, 2 * k + d)] += c;
            }
        }
    };
    let current_expr = |c: &Current| -> Expr {
        match *c {
            Current::State(s) => Expr {
                states: vec![(s, 1.0)],
                inputs: Vec::new(),
            },
            Current::Resistive { bus, g } => vbus[bus].scaled(g),
            Current::SourceKcl(_) => unreachable!(),
        }
    };
    let all: Vec<Current> = vsc_current
        .iter()
        .chain(&load_current)
        .chain(&line_current)
        .copied()
        .collect();
    for (row, c) in all.iter().enumerate() {
        let e = match *c {
            Current::SourceKcl(k) => {
                // Current leaving the bus through lines and loads.
                let b = bus(&topo.vscs[k].bus);
                let mut e = Expr::default();
                for (j, l) in topo.loads.iter().enumerate() {
                    if bus(&l.bus) == b {
                        e.add(&current_expr(&load_current[j]), 1.0);
                    }
                }
                for (j, l) in topo.lines.iter().enumerate() {
                    if bus(&l.from) == b {
                        e.add(&current_expr(&line_current[j]), 1.0);
                    }
                    if bus(&l.to) == b {
                        e.add(&current_expr(&line_current[j]), -1.0);
                    }
                }
                e
            }
            _ => current_expr(c),
        };
        put(row, &e, &mut c_out, &mut d_out);
    }

    Ok(StateSpace {
        a_net: a,
        b_net: bm,
        state_labels: labels,
        c_out,
        d_out,
    })
}

/// Resistance of a three-phase resistive load drawing `p_w` at line voltage
/// `v_ll`; an open circuit when `p_w` is zero.
pub fn load_resistance(p_w: f64, v_ll: f64) -> f64 {
    if p_w > 0.0 {
        v_ll * v_ll / p_w
    } else {
        f64::INFINITY
    }
}

/// Linear maps from stacked VSC output voltages `[v_d0, v_q0, v_d1, …]` to
/// currents and bus voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGains {
    pub g_io: DMatrix<f64>,
    pub g_iload: DMatrix<f64>,
    pub g_iline: DMatrix<f64>,
    pub g_vbus: DMatrix<f64>,
}

impl StaticGains {
    pub fn n_vsc(&self) -> usize {
        self.g_io.ncols() / 2
    }

    fn rows(m: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
        m.rows(2 * i, 2).into_owned()
    }

    pub fn io_block(&self, i: usize) -> DMatrix<f64> {
        Self::rows(&self.g_io, i)
    }

    pub fn iload_block(&self, j: usize) -> DMatrix<f64> {
        Self::rows(&self.g_iload, j)
    }

    pub fn iline_block(&self, j: usize) -> DMatrix<f64> {
        Self::rows(&self.g_iline, j)
    }

    pub fn vbus_block(&self, b: usize) -> DMatrix<f64> {
        Self::rows(&self.g_vbus, b)
    }

    /// `[g_io; g_iload; g_iline]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.g_io.ncols();
        let rows = self.g_io.nrows() + self.g_iload.nrows() + self.g_iline.nrows();
        let mut out = DMatrix::zeros(rows, n);
        let mut r = 0;
        for m in [&self.g_io, &self.g_iload, &self.g_iline] {
            out.rows_mut(r, m.nrows()).copy_from(m);
            r += m.nrows();
        }
        out
    }
}

/// Gains by complex nodal analysis with exact elimination of bus voltages.
pub fn steady_state_gains(topo: &NetworkTopology) -> Result<StaticGains, NetError> {
    nodal_gains(topo, None)
}

/// Gains with the topology's virtual resistance at every bus that is not a
/// voltage-source bus; identical to `C (−A)⁻¹ B + D` of the state space.
pub fn steady_state_gains_with_virtual_shunt(topo: &NetworkTopology) -> Result<StaticGains, NetError> {
    nodal_gains(topo, Some(topo.virtual_resistance))
}

fn nodal_gains(topo: &NetworkTopology, shunt: Option<f64>) -> Result<StaticGains, NetError> {
    topo.validate()?;
    let nb = topo.buses.len();
    let nv = topo.n_vsc();
    let w = topo.omega;
    let bus = |b: &str| topo.bus_index(b).unwrap();
    let z = |r: f64, l: f64| Complex::new(r, w * l);

    // Known voltages at voltage-source buses; unknowns elsewhere.
    let mut source_of = vec![None; nb];
    for (k, v) in topo.vscs.iter().enumerate() {
        if v.lcl.is_voltage_source() {
            source_of[bus(&v.bus)] = Some(k);
        }
    }
    let free: Vec<usize> = (0..nb).filter(|b| source_of[*b].is_none()).collect();
    let nf = free.len();
    let zero = Complex::new(0.0, 0.0);

    // Full admittance matrix, then partitioned.
    let mut y = DMatrix::from_element(nb, nb, zero);
    for l in &topo.lines {
        let ya = z(l.r, l.l).inv();
        let (a, b) = (bus(&l.from), bus(&l.to));
        y[(a, a)] += ya;
        y[(b, b)] += ya;
        y[(a, b)] -= ya;
        y[(b, a)] -= ya;
    }
    for l in &topo.loads {
        if l.r.is_finite() {
            let b = bus(&l.bus);
            y[(b, b)] += z(l.r, l.l).inv();
        }
    }
    // Injection map from VSC voltages through coupling admittances.
    let mut inj = DMatrix::from_element(nb, nv, zero);
    for (k, v) in topo.vscs.iter().enumerate() {
        if !v.lcl.is_voltage_source() {
            let b = bus(&v.bus);
            let yc = z(v.lcl.r_c, v.lcl.l_c).inv();
            y[(b, b)] += yc;
            inj[(b, k)] += yc;
        }
    }
    if let Some(r) = shunt {
        for &b in &free {
            y[(b, b)] += Complex::new(1.0 / r, 0.0);
        }
    }

    // Bus voltages: T (nb × nv).
    let mut t = DMatrix::from_element(nb, nv, zero);
    for b in 0..nb {
        if let Some(k) = source_of[b] {
            t[(b, k)] = Complex::new(1.0, 0.0);
        }
    }
    if nf > 0 {
        let mut yff = DMatrix::from_element(nf, nf, zero);
        let mut rhs = DMatrix::from_element(nf, nv, zero);
        for (i, &bi) in free.iter().enumerate() {
            for (j, &bj) in free.iter().enumerate() {
                yff[(i, j)] = y[(bi, bj)];
            }
            for k in 0..nv {
                let mut acc = inj[(bi, k)];
                for b in 0..nb {
                    if source_of[b].is_some() {
                        acc -= y[(bi, b)] * t[(b, k)];
                    }
                }
                rhs[(i, k)] = acc;
            }
        }
        let sol = yff.lu().solve(&rhs).ok_or(NetError::Singular)?;
        if sol.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(NetError::Singular);
        }
        for (i, &b) in free.iter().enumerate() {
            for k in 0..nv {
                t[(b, k)] = sol[(i, k)];
            }
        }
    }

    let mut g_iline = DMatrix::from_element(topo.lines.len(), nv, zero);
    for (j, l) in topo.lines.iter().enumerate() {
        let ya = z(l.r, l.l).inv();
        let (a, b) = (bus(&l.from), bus(&l.to));
        for k in 0..nv {
            g_iline[(j, k)] = ya * (t[(a, k)] - t[(b, k)]);
        }
    }
    let mut g_iload = DMatrix::from_element(topo.loads.len(), nv, zero);
    for (j, l) in topo.loads.iter().enumerate() {
        if l.r.is_finite() {
            let yl = z(l.r, l.l).inv();
            let b = bus(&l.bus);
            for k in 0..nv {
                g_iload[(j, k)] = yl * t[(b, k)];
            }
        }
    }
    let mut g_io = DMatrix::from_element(nv, nv, zero);
    for (i, v) in topo.vscs.iter().enumerate() {
        let b = bus(&v.bus);
        if v.lcl.is_voltage_source() {
            // Everything leaving the bus.
            for k in 0..nv {
                let mut acc = zero;
                for (j, l) in topo.lines.iter().enumerate() {
                    if bus(&l.from) == b {
                        acc += g_iline[(j, k)];
                    }
                    if bus(&l.to) == b {
                        acc -= g_iline[(j, k)];
                    }
                }
                for (j, l) in topo.loads.iter().enumerate() {
                    if bus(&l.bus) == b {
                        acc += g_iload[(j, k)];
                    }
                }
                g_io[(i, k)] = acc;
            }
        } else {
            let yc = z(v.lcl.r_c, v.lcl.l_c).inv();
            for k in 0..nv {
                let own = if k == i { Complex::new(1.0, 0.0) } else { zero };
                g_io[(i, k)] = yc * (own - t[(b, k)]);
            }
        }
    }
    Ok(StaticGains {
        g_io: expand_complex(&g_io),
        g_iload: expand_complex(&g_iload),
        g_iline: expand_complex(&g_iline),
        g_vbus: expand_complex(&t),
    })
}

/// Capacitor-current term `[[0, −ωC], [ωC, 0]]` placed at VSC `i`'s columns.
pub fn capacitor_block(n_vsc: usize, i: usize, omega: f64, c_f: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2, 2 * n_vsc);
    m[(0, 2 * i + 1)] = -omega * c_f;
    m[(1, 2 * i)] = omega * c_f;
    m
}

/// Quadratic loss forms over the stacked VSC voltages, in W per V².
#[derive(Debug, Clone)]
pub struct LossForms {
    /// Filter resistances `r_f` (inductor current) and `r_c` (output current).
    pub lcl: DMatrix<f64>,
    pub line: DMatrix<f64>,
}

impl LossForms {
    pub fn total(&self) -> DMatrix<f64> {
        &self.lcl + &self.line
    }
}

pub fn loss_quadratic_forms(gains: &StaticGains, topo: &NetworkTopology) -> LossForms {
    let nv = topo.n_vsc();
    assert_eq!(gains.n_vsc(), nv, "gains and topology disagree on VSC count");
    let mut lcl = DMatrix::zeros(2 * nv, 2 * nv);
    for (i, v) in topo.vscs.iter().enumerate() {
        let gio = gains.io_block(i);
        let gil = capacitor_block(nv, i, topo.omega, v.lcl.c_f) + &gio;
        lcl += gil.transpose() * &gil * v.lcl.r_f + gio.transpose() * &gio * v.lcl.r_c;
    }
    let mut line = DMatrix::zeros(2 * nv, 2 * nv);
    for (j, l) in topo.lines.iter().enumerate() {
        let g = gains.iline_block(j);
        line += g.transpose() * &g * l.r;
    }
    // Exact symmetry.
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    LossForms {
        lcl: sym(lcl),
        line: sym(line),
    }
}
