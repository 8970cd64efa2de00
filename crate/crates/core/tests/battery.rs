use mgmpc::battery::{
    efficiency, eval_eff, exact_eff_target, fit_default, fit_quadratic_surface, linspace, ocv_and_resistance, soc_step,
    solve_cell_current, BatteryPack, CellCoeffs, Direction, EffPoly,
};
use proptest::prelude::*;

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
fn cell_current_matches_quadratic_formula() {
    let pack = fixed_cell(4.0, 0.01);
    let n = 215.0 * 130.0;
    // Textbook root of i² − (V/R) i + P/(N R) = 0, smaller branch.
    let (v, r, p) = (4.0f64, 0.01f64, 5e4f64);
    let oracle = (v - (v * v - 4.0 * r * p / n).sqrt()) / (2.0 * r);
    let i = solve_cell_current(0.5, p, &pack).unwrap();
    assert!((i - oracle).abs() < 1e-12 * oracle);
    // Frozen from the oracle above.
    assert!((i - 0.447728343).abs() < 1e-8, "{i}");
}

#[test]
fn discharge_efficiency_falls_with_power() {
    let pack = BatteryPack::standard(0.5);
    for s in [0.3, 0.6, 0.9] {
        let lo = efficiency(s, 5e3, &pack).unwrap();
        let hi = efficiency(s, 5e4, &pack).unwrap();
        assert!(hi < lo && lo < 1.0);
        let ch = efficiency(s, -5e4, &pack).unwrap();
        assert!(ch < 1.0 && ch > 0.0);
    }
    assert_eq!(efficiency(0.5, 0.0, &pack).unwrap(), 1.0);
}

#[test]
fn fit_recovers_exact_quadratic() {
    let c = [0.99, 3e-3, -2e-3, -4e-7, 3e-13, 1e-7];
    let mut samples = Vec::new();
    for s in linspace(0.2, 1.0, 7) {
        for p in linspace(0.0, 1e5, 9) {
            let y = c[0] + c[1] * s + c[2] * s * s + c[3] * p + c[4] * p * p + c[5] * s * p;
            samples.push((s, p, y));
        }
    }
    let f = fit_quadratic_surface(&samples).unwrap();
    for (a, b) in f.iter().zip(&c) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-12) + 1e-15, "{a} vs {b}");
    }
}

#[test]
fn rank_deficient_grid_is_rejected() {
    let samples: Vec<_> = linspace(0.2, 1.0, 10).into_iter().map(|s| (s, 1e4, 1.0)).collect();
    assert!(fit_quadratic_surface(&samples).is_err());
}

#[test]
fn default_fit_stays_within_half_a_point() {
    let pack = BatteryPack::standard(0.5);
    let poly = fit_default(&pack).unwrap();
    let mut worst: f64 = 0.0;
    for s in linspace(0.2, 1.0, 50) {
        for p in linspace(0.0, 1e5, 50) {
            for dir in [Direction::Charge, Direction::Discharge] {
                let exact = exact_eff_target(&pack, s, p, dir).unwrap();
                worst = worst.max((poly.eval_raw(s, p, dir) - exact).abs());
            }
        }
    }
    assert!(worst <= 0.005, "{worst}");
    let ch = eval_eff(&poly, 0.7, 5e3, Direction::Charge);
    assert!((ch - 0.998).abs() <= 0.003, "{ch}");
}

#[test]
fn table_charge_efficiency_falls_with_power() {
    let c = EffPoly::table().ch;
    for p in linspace(0.0, 1e5, 101) {
        let slope = c[3] + 2.0 * c[4] * p + c[5] * 0.7;
        assert!(slope < 0.0, "P {p}: {slope}");
    }
}

#[test]
fn charge_discharge_round_trip_loss() {
    let (p, e, t) = (2e4, 3.6e8, 60.0);
    let s1 = soc_step(0.6, p, 0.0, 0.99, 0.99, t, e);
    let s2 = soc_step(s1, 0.0, p, 0.99, 0.99, t, e);
    let want = (1.0 / 0.99 - 0.99) * t * p / e;
    assert!(((0.6 - s2) - want).abs() < 1e-15);
}

proptest! {
    #[test]
    fn cell_current_reconstructs_power(soc in 0.2f64..1.0, p in -1e5f64..1e5) {
        let pack = BatteryPack::standard(soc);
        let i = solve_cell_current(soc, p, &pack).unwrap();
        let (v, r) = ocv_and_resistance(soc, &pack.coeffs);
        let back = i * (v - i * r) * pack.n_cells();
        prop_assert!((back - p).abs() <= 1e-9 * p.abs().max(1.0));
        prop_assert_eq!(i > 0.0, p > 0.0);
    }

    #[test]
    fn efficiency_is_in_unit_interval(soc in 0.2f64..1.0, p in -1e5f64..1e5) {
        let eta = efficiency(soc, p, &BatteryPack::standard(soc)).unwrap();
        prop_assert!(eta > 0.0 && eta <= 1.0);
        if p != 0.0 {
            prop_assert!(eta < 1.0);
        }
    }

    #[test]
    fn soc_step_superposes(soc in 0.0f64..1.0, a in 0.0f64..1e5, b in 0.0f64..1e5,
                           c in 0.0f64..1e5, d in 0.0f64..1e5, ec in 0.9f64..1.0, ed in 0.9f64..1.0) {
        let e = 3.6e8;
        let both = soc_step(soc, a + c, b + d, ec, ed, 60.0, e) - soc;
        let parts = (soc_step(soc, a, b, ec, ed, 60.0, e) - soc) + (soc_step(soc, c, d, ec, ed, 60.0, e) - soc);
        prop_assert!((both - parts).abs() < 1e-14);
    }
}
