//! Single-diode photovoltaic module and its maximum power point, scaled to
//! an array of a given nominal rating at standard test conditions.

use serde::{Deserialize, Serialize};

const Q_E: f64 = 1.602_176_634e-19;
const K_B: f64 = 1.380_649e-23;
const T_STC: f64 = 298.15;
const G_STC: f64 = 1000.0;

/// Module datasheet values plus fitted diode parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelParams {
    pub isc: f64,
    pub voc: f64,
    pub n_cells: u32,
    /// A/K.
    pub k_i: f64,
    /// V/K.
    pub k_v: f64,
    pub ideality: f64,
    pub r_s: f64,
    pub r_p: f64,
}

impl Default for PanelParams {
    /// 200 W polycrystalline module (54 cells).
    fn default() -> Self {
        Self {
            isc: 8.21,
            voc: 32.9,
            n_cells: 54,
            k_i: 0.0032,
            k_v: -0.123,
            ideality: 1.3,
            r_s: 0.221,
            r_p: 415.405,
        }
    }
}

struct Operating {
    i_pv: f64,
    i_0: f64,
    a_vt: f64,
    r_s: f64,
    r_p: f64,
}

impl PanelParams {
    fn operating(&self, irradiance: f64, temp_c: f64) -> Operating {
        let t = temp_c + 273.15;
        let dt = t - T_STC;
        let vt = self.n_cells as f64 * K_B * t / Q_E;
        let a_vt = self.ideality * vt;
        let i_pv_n = (self.r_p + self.r_s) / self.r_p * self.isc;
        let i_pv = (i_pv_n + self.k_i * dt) * irradiance / G_STC;
        let i_0 = (self.isc + self.k_i * dt) / (((self.voc + self.k_v * dt) / a_vt).exp() - 1.0);
        Operating {
            i_pv,
            i_0,
            a_vt,
            r_s: self.r_s,
            r_p: self.r_p,
        }
    }

    /// Module current at terminal voltage `v`.
    pub fn current(&self, v: f64, irradiance: f64, temp_c: f64) -> f64 {
        self.operating(irradiance, temp_c).current(v)
    }

    /// Maximum module power (W).
    pub fn mpp(&self, irradiance: f64, temp_c: f64) -> f64 {
        if irradiance <= 0.0 {
            return 0.0;
        }
        let op = self.operating(irradiance, temp_c);
        // Power is unimodal on [0, V_oc]; V_oc is where the current vanishes.
        let v_oc = bisect(|v| op.current(v), 0.0, 2.0 * self.voc);
        let p = |v: f64| v * op.current(v);
        let v = golden_max(p, 0.0, v_oc, 1e-9);
        p(v).max(0.0)
    }
}

impl Operating {
    /// Solves the implicit diode equation for the current. The residual is
    /// strictly decreasing in `i`, so safeguarded Newton inside a bracket
    /// always converges.
    fn current(&self, v: f64) -> f64 {
        let f = |i: f64| {
            let x = (v + self.r_s * i) / self.a_vt;
            let e = x.exp();
            let r = self.i_pv - self.i_0 * (e - 1.0) - (v + self.r_s * i) / self.r_p - i;
            let dr = -self.i_0 * e * self.r_s / self.a_vt - self.r_s / self.r_p - 1.0;
            (r, dr)
        };
        let mut hi = self.i_pv.max(0.0) + 1.0;
        let mut lo = -hi;
        while f(lo).0 < 0.0 {
            lo *= 2.0;
        }
        let mut i = self.i_pv.clamp(lo, hi);
        for _ in 0..200 {
            let (r, dr) = f(i);
            if r > 0.0 {
                lo = i;
            } else {
                hi = i;
            }
            let mut next = i - r / dr;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - i).abs() <= 1e-13 * (1.0 + i.abs()) {
                return next;
            }
            i = next;
        }
        i
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    // f(lo) ≥ 0 ≥ f(hi).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Array of identical modules scaled to `nominal_w` at 1000 W/m², 25 °C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvArray {
    pub panel: PanelParams,
    scale: f64,
}

impl PvArray {
    pub fn new(panel: PanelParams, nominal_w: f64) -> Self {
        let p_stc = panel.mpp(G_STC, T_STC - 273.15);
        Self {
            panel,
            scale: nominal_w / p_stc,
        }
    }

    /// Array MPP power in W. The temperature is the cell temperature.
    pub fn power(&self, irradiance: f64, temp_c: f64) -> f64 {
        self.scale * self.panel.mpp(irradiance, temp_c)
    }
}

/// Convenience wrapper: array MPP from weather.
pub fn pv_power_from_weather(irradiance: f64, temp_c: f64, panel: &PanelParams, nominal_w: f64) -> f64 {
    PvArray::new(*panel, nominal_w).power(irradiance, temp_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasheet_points_are_reproduced() {
        let p = PanelParams::default();
        // Short circuit and open circuit at STC.
        assert!((p.current(0.0, 1000.0, 25.0) - 8.21).abs() < 0.01);
        let i_oc = p.current(32.9, 1000.0, 25.0);
        assert!(i_oc.abs() < 0.05, "{i_oc}");
        // Rated module power is about 200 W.
        let pm = p.mpp(1000.0, 25.0);
        assert!((pm - 200.1).abs() < 1.0, "{pm}");
    }

    #[test]
    fn stc_gives_nominal_and_dark_gives_zero() {
        let a = PvArray::new(PanelParams::default(), 1e5);
        assert!((a.power(1000.0, 25.0) - 1e5).abs() < 1e-6);
        assert_eq!(a.power(0.0, 25.0), 0.0);
    }

    #[test]
    fn hotter_cells_produce_less() {
        let a = PvArray::new(PanelParams::default(), 1e5);
        assert!(a.power(800.0, 50.0) < a.power(800.0, 25.0));
    }
}
