//! Lithium-ion pack: SoC-dependent open-circuit voltage and resistance,
//! exact cell current and efficiency, and the bivariate quadratic
//! efficiency approximation used by the controller.
//!
//! Power sign: `p > 0` discharges into the AC side. SoC is a fraction.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BatteryError {
    #[error("power {p:.1} W exceeds the deliverable maximum {max:.1} W at this SoC")]
    PowerBeyondLimit { p: f64, max: f64 },
    #[error("efficiency fit is rank deficient ({0} independent columns of 6)")]
    RankDeficientFit(usize),
}

/// Cell equivalent-circuit coefficients.
///
/// `V_oc = a0 e^(−a1 s) + a2 + a3 s − a4 s² + a5 s³`,
/// `R_s = b0 e^(−b1 s) + b2 + b3 s − b4 s² + b5 s³`,
/// `R_ts = c0 e^(−c1 s) + c2`, `R_tl = d0 e^(−d1 s) + d2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoeffs {
    pub a: [f64; 6],
    pub b: [f64; 6],
    pub c: [f64; 3],
    pub d: [f64; 3],
}

impl Default for CellCoeffs {
    /// Generic 4.2 V lithium-ion cell: V_oc(1) ≈ 4.2 V, about 0.17 Ω total
    /// steady-state resistance.
    fn default() -> Self {
        Self {
            a: [-1.031, 35.0, 3.782, 0.2156, 0.1178, 0.3201],
            b: [0.1562, 24.37, 0.07446, 0.0, 0.0, 0.0],
            c: [0.3208, 29.14, 0.04669],
            d: [6.603, 155.2, 0.04984],
        }
    }
}

fn poly_exp6(k: &[f64; 6], s: f64) -> f64 {
    k[0] * (-k[1] * s).exp() + k[2] + k[3] * s - k[4] * s * s + k[5] * s * s * s
}

fn exp3(k: &[f64; 3], s: f64) -> f64 {
    k[0] * (-k[1] * s).exp() + k[2]
}

/// Open-circuit voltage (V) and total terminal resistance (Ω) of one cell.
pub fn ocv_and_resistance(soc: f64, coeffs: &CellCoeffs) -> (f64, f64) {
    let v = poly_exp6(&coeffs.a, soc);
    let r = poly_exp6(&coeffs.b, soc) + exp3(&coeffs.c, soc) + exp3(&coeffs.d, soc);
    (v, r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryPack {
    #[serde(default)]
    pub coeffs: CellCoeffs,
    pub n_series: u32,
    pub n_para: u32,
    /// Ws.
    pub e_max: f64,
    pub soc: f64,
    pub p_ch_max: f64,
    pub p_dis_max: f64,
}

impl BatteryPack {
    /// 215 × 130 cells, 100 kWh, ±100 kW.
    pub fn standard(soc: f64) -> Self {
        Self {
            coeffs: CellCoeffs::default(),
            n_series: 215,
            n_para: 130,
            e_max: 3.6e8,
            soc,
            p_ch_max: 1e5,
            p_dis_max: 1e5,
        }
    }

    pub fn n_cells(&self) -> f64 {
        self.n_series as f64 * self.n_para as f64
    }

    /// Largest discharge power the pack can deliver at `soc`.
    pub fn max_deliverable_power(&self, soc: f64) -> f64 {
        let (v, r) = ocv_and_resistance(soc, &self.coeffs);
        v * v * self.n_cells() / (4.0 * r)
    }

    /// Terminal voltage of the pack at the given cell current.
    pub fn dc_voltage(&self, soc: f64, i_cell: f64) -> f64 {
        let (v, r) = ocv_and_resistance(soc, &self.coeffs);
        self.n_series as f64 * (v - i_cell * r)
    }

    /// Resistive loss in all cells at the given cell current.
    pub fn resistive_loss(&self, soc: f64, i_cell: f64) -> f64 {
        let (_, r) = ocv_and_resistance(soc, &self.coeffs);
        i_cell * i_cell * r * self.n_cells()
    }
}

/// Cell current for pack terminal power `p_vsc`, on the high-voltage branch
/// of `i² − i V/R + P/(N R) = 0`. Discharge is positive.
pub fn solve_cell_current(soc: f64, p_vsc: f64, pack: &BatteryPack) -> Result<f64, BatteryError> {
    let (v, r) = ocv_and_resistance(soc, &pack.coeffs);
    let p_cell = p_vsc / pack.n_cells();
    let disc = v * v - 4.0 * r * p_cell;
    if disc < 0.0 {
        return Err(BatteryError::PowerBeyondLimit {
            p: p_vsc,
            max: pack.max_deliverable_power(soc),
        });
    }
    // 2c / (−b + sqrt(b² − 4c)) form avoids cancellation at small power.
    Ok(2.0 * p_cell / (v + disc.sqrt()))
}

/// Exact charge efficiency (charging) or discharge efficiency
/// (discharging) at terminal power `p_vsc`.
pub fn efficiency(soc: f64, p_vsc: f64, pack: &BatteryPack) -> Result<f64, BatteryError> {
    if p_vsc == 0.0 {
        return Ok(1.0);
    }
    let i = solve_cell_current(soc, p_vsc, pack)?;
    let (v, r) = ocv_and_resistance(soc, &pack.coeffs);
    let terminal = v - i * r;
    Ok(if i <= 0.0 { v / terminal } else { terminal / v })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Charge,
    Discharge,
}

/// Coefficients `(p0, p_soc1, p_soc2, p_p1, p_p2, p_psoc)` of
/// `p0 + p_soc1 s + p_soc2 s² + p_p1 P + p_p2 P² + p_psoc s P` for
/// η_ch (`ch`) and 1/η_dis (`dis`). `s` is a fraction, `P` a positive
/// magnitude in W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffPoly {
    pub ch: [f64; 6],
    pub dis: [f64; 6],
}

pub const FIT_SOC_RANGE: (f64, f64) = (0.2, 1.0);
pub const FIT_POWER_RANGE: (f64, f64) = (0.0, 1e5);

fn basis(soc: f64, p: f64) -> [f64; 6] {
    [1.0, soc, soc * soc, p, p * p, soc * p]
}

impl EffPoly {
    /// Preset coefficient set for the standard pack.
    pub fn table() -> Self {
        Self {
            ch: [1.00, 4.00e-3, -3.11e-3, -4.77e-7, 3.06e-13, 9.66e-8],
            dis: [1.00, -4.60e-3, 4.13e-3, 5.00e-7, 4.23e-13, -1.36e-7],
        }
    }

    pub fn coeffs(&self, dir: Direction) -> &[f64; 6] {
        match dir {
            Direction::Charge => &self.ch,
            Direction::Discharge => &self.dis,
        }
    }

    /// Polynomial value without any range handling.
    pub fn eval_raw(&self, soc: f64, p: f64, dir: Direction) -> f64 {
        basis(soc, p).iter().zip(self.coeffs(dir)).map(|(b, c)| b * c).sum()
    }
}

/// η_ch (charge) or 1/η_dis (discharge) from the polynomial. Inputs outside
/// the fitted box are clamped with a warning; the result is clamped to
/// η_ch ≤ 1 and 1/η_dis ≥ 1.
pub fn eval_eff(poly: &EffPoly, soc: f64, p: f64, dir: Direction) -> f64 {
    let s = soc.clamp(FIT_SOC_RANGE.0, FIT_SOC_RANGE.1);
    let pc = p.clamp(FIT_POWER_RANGE.0, FIT_POWER_RANGE.1);
    if s != soc || pc != p {
        warn!("efficiency polynomial evaluated outside its range at SoC {soc:.4}, P {p:.1} W; clamped");
    }
    let y = poly.eval_raw(s, pc, dir);
    match dir {
        Direction::Charge => y.min(1.0),
        Direction::Discharge => y.max(1.0),
    }
}

/// Exact quantity the polynomial approximates: η_ch at charging power `p`,
/// or 1/η_dis at discharging power `p` (both `p ≥ 0`).
pub fn exact_eff_target(pack: &BatteryPack, soc: f64, p: f64, dir: Direction) -> Result<f64, BatteryError> {
    match dir {
        Direction::Charge => efficiency(soc, -p, pack),
        Direction::Discharge => efficiency(soc, p, pack).map(|e| 1.0 / e),
    }
}

/// Least-squares fit of `p0 + p1 s + p2 s² + p3 P + p4 P² + p5 s P` to
/// samples `(s, P, y)`.
pub fn fit_quadratic_surface(samples: &[(f64, f64, f64)]) -> Result<[f64; 6], BatteryError> {
    // Power is scaled to O(1) for conditioning; coefficients are mapped back.
    let ps = samples.iter().fold(1.0f64, |m, (_, p, _)| m.max(p.abs()));
    let mut a = DMatrix::zeros(samples.len(), 6);
    let mut y = DVector::zeros(samples.len());
    for (r, &(s, p, v)) in samples.iter().enumerate() {
        let b = basis(s, p / ps);
        for j in 0..6 {
            a[(r, j)] = b[j];
        }
        y[r] = v;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|v| **v > 1e-10 * smax).count();
    if rank < 6 {
        return Err(BatteryError::RankDeficientFit(rank));
    }
    let x = svd.solve(&y, 0.0).expect("SVD computed with U and V");
    Ok([x[0], x[1], x[2], x[3] / ps, x[4] / (ps * ps), x[5] / ps])
}

/// Fits both polynomials to the exact surface on the given grids.
pub fn fit_eff_polynomials(pack: &BatteryPack, soc_grid: &[f64], power_grid: &[f64]) -> Result<EffPoly, BatteryError> {
    let mut ch = Vec::with_capacity(soc_grid.len() * power_grid.len());
    let mut dis = Vec::with_capacity(ch.capacity());
    for &s in soc_grid {
        for &p in power_grid {
            ch.push((s, p, exact_eff_target(pack, s, p, Direction::Charge)?));
            dis.push((s, p, exact_eff_target(pack, s, p, Direction::Discharge)?));
        }
    }
    Ok(EffPoly {
        ch: fit_quadratic_surface(&ch)?,
        dis: fit_quadratic_surface(&dis)?,
    })
}

/// Evenly spaced grid including both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Default fit over SoC ∈ [0.2, 1], P ∈ [0, 100 kW].
pub fn fit_default(pack: &BatteryPack) -> Result<EffPoly, BatteryError> {
    fit_eff_polynomials(
        pack,
        &linspace(FIT_SOC_RANGE.0, FIT_SOC_RANGE.1, 33),
        &linspace(FIT_POWER_RANGE.0, FIT_POWER_RANGE.1, 41),
    )
}

/// One sampling interval of the SoC recursion. Not clamped.
pub fn soc_step(soc: f64, p_ch: f64, p_dis: f64, eta_ch: f64, eta_dis: f64, t_s: f64, e_max: f64) -> f64 {
    if p_ch > 0.0 && p_dis > 0.0 {
        warn!("simultaneous charge {p_ch:.1} W and discharge {p_dis:.1} W in SoC update");
    }
    soc + eta_ch * t_s * p_ch / e_max - t_s * p_dis / (eta_dis * e_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_ocv_coefficient() {
        let mut c = CellCoeffs {
            a: [0.0; 6],
            ..CellCoeffs::default()
        };
        c.a[2] = 3.6;
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(ocv_and_resistance(s, &c).0, 3.6);
        }
    }

    #[test]
    fn full_cell_is_near_rated_voltage() {
        let (v, _) = ocv_and_resistance(1.0, &CellCoeffs::default());
        assert!((v - 4.2).abs() < 0.02 * 4.2, "{v}");
    }

    #[test]
    fn resistance_rises_at_low_soc() {
        let c = CellCoeffs::default();
        assert!(ocv_and_resistance(0.2, &c).1 > ocv_and_resistance(0.8, &c).1);
    }

    #[test]
    fn default_cell_is_valid_on_operating_range() {
        let c = CellCoeffs::default();
        let mut last = 0.0;
        for s in linspace(0.2, 1.0, 81) {
            let (v, r) = ocv_and_resistance(s, &c);
            assert!(v > last && r > 0.0);
            last = v;
        }
    }

    fn fixed_cell(v: f64, r: f64) -> BatteryPack {
        let mut pack = BatteryPack::standard(0.5);
        pack.coeffs = CellCoeffs {
            a: [0.0, 0.0, v, 0.0, 0.0, 0.0],
            b: [0.0, 0.0, r, 0.0, 0.0, 0.0],
            c: [0.0; 3],
            d: [0.0; 3],
        };
        pack
    }

    #[test]
    fn cell_current_at_zero_and_peak_power() {
        let pack = fixed_cell(4.0, 0.01);
        assert_eq!(solve_cell_current(0.5, 0.0, &pack).unwrap(), 0.0);
        let pmax = pack.max_deliverable_power(0.5);
        let i = solve_cell_current(0.5, pmax, &pack).unwrap();
        assert!((i - 200.0).abs() < 1e-6);
        match solve_cell_current(0.5, pmax * 1.01, &pack) {
            Err(BatteryError::PowerBeyondLimit { max, .. }) => assert!((max - pmax).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn soc_step_arithmetic() {
        let s = soc_step(0.5, 5e4, 0.0, 1.0, 1.0, 60.0, 3.6e8);
        assert!((s - (0.5 + 1.0 / 120.0)).abs() < 1e-15);
        assert_eq!(soc_step(0.37, 0.0, 0.0, 0.9, 0.9, 60.0, 3.6e8), 0.37);
    }

    #[test]
    fn unit_polynomial_evaluates_to_one() {
        let p = EffPoly {
            ch: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            dis: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        for (s, w) in [(0.2, 0.0), (0.5, 3e4), (1.0, 1e5)] {
            assert_eq!(eval_eff(&p, s, w, Direction::Charge), 1.0);
            assert_eq!(eval_eff(&p, s, w, Direction::Discharge), 1.0);
        }
    }

    #[test]
    fn table_preset_matches_quoted_efficiencies() {
        let p = EffPoly::table();
        let ch = eval_eff(&p, 0.7, 5e3, Direction::Charge);
        let dis = 1.0 / eval_eff(&p, 0.7, 5e3, Direction::Discharge);
        assert!((ch - 0.9981).abs() <= 0.002, "{ch}");
        assert!((dis - 0.9980).abs() <= 0.002, "{dis}");
    }

    #[test]
    fn out_of_range_inputs_are_clamped() {
        let p = EffPoly::table();
        assert_eq!(
            eval_eff(&p, 0.05, 2e5, Direction::Discharge),
            eval_eff(&p, 0.2, 1e5, Direction::Discharge)
        );
    }
}
