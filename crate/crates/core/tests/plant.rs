use std::path::PathBuf;

use mgmpc::battery::{ocv_and_resistance, BatteryPack};
use mgmpc::netmodel::{load_resistance, NetworkTopology};
use mgmpc::plant::profile::{generate_load_profile, Predictor};
use mgmpc::plant::pv::{PanelParams, PvArray};
use mgmpc::plant::{Plant, PlantBattery, PlantConfig};
use mgmpc::scenario::Scenario;
use mgmpc::sim::Inputs;
use nalgebra::DVector;

const TOPO: &str = r#"
frequency_hz = 50.0
buses = ["a", "b"]

[[lines]]
from = "a"
to = "b"
r_ohm = 0.05
l_henry = 1e-4

[[loads]]
bus = "b"
r_ohm = 1e9

[[vscs]]
name = "batt"
bus = "a"
kind = "battery"
r_f = 0.15
l_f = 3.8e-3
c_f = 680e-6
r_c = 0.05
l_c = 300e-6
"#;

fn plant(soc: f64) -> Plant {
    Plant::new(
        NetworkTopology::from_toml_str(TOPO).unwrap(),
        vec![PlantBattery {
            vsc: 0,
            pack: BatteryPack::standard(soc),
        }],
        PlantConfig::default(),
    )
}

/// Cell-level chemical power drawn over the interval, from the terminal
/// power by the quadratic in cell current.
fn chemical_power(pack: &BatteryPack, soc: f64, p: f64) -> f64 {
    let (v, r) = ocv_and_resistance(soc, &pack.coeffs);
    let p_cell = p / pack.n_cells();
    let i = (v - (v * v - 4.0 * r * p_cell).sqrt()) / (2.0 * r);
    i * v * pack.n_cells()
}

#[test]
fn discharge_soc_step_follows_chemical_energy() {
    let mut p = plant(0.7);
    let pack = p.state.batteries[0].pack.clone();
    let v = DVector::from_vec(vec![415.0, 0.0]);
    let m = p.step(&v, &[], 5e4).unwrap();
    let pb = m.p_vsc[0];
    assert!(pb > 4.5e4 && pb < 6e4, "{pb}");
    let want = 0.7 - 60.0 * chemical_power(&pack, 0.7, pb) / pack.e_max;
    assert!((m.soc[0] - want).abs() < 1e-12, "{} vs {want}", m.soc[0]);
    assert!((p.soc()[0] - want).abs() < 1e-12);
    let eta = pb / chemical_power(&pack, 0.7, pb);
    assert!((m.eta[0] - eta).abs() < 1e-12, "{} vs {eta}", m.eta[0]);
}

#[test]
fn charging_raises_soc_by_stored_energy() {
    // A battery at b held at a higher voltage feeds the load and charges
    // the one at a.
    let two = TOPO.replace(
        "[[vscs]]\nname = \"batt\"",
        "[[vscs]]\nname = \"src\"\nbus = \"b\"\nkind = \"battery\"\nr_f = 0.15\nl_f = 3.8e-3\nc_f = 680e-6\nr_c = 0.05\nl_c = 300e-6\n\n[[vscs]]\nname = \"batt\"",
    );
    let topo = NetworkTopology::from_toml_str(&two).unwrap();
    let (src, batt) = (topo.vsc_at("b").unwrap(), topo.vsc_at("a").unwrap());
    let mut p = Plant::new(
        topo,
        vec![
            PlantBattery {
                vsc: src,
                pack: BatteryPack::standard(0.9),
            },
            PlantBattery {
                vsc: batt,
                pack: BatteryPack::standard(0.4),
            },
        ],
        PlantConfig::default(),
    );
    let pack = p.state.batteries[1].pack.clone();
    let mut v = DVector::zeros(4);
    v[2 * src] = 430.0;
    v[2 * batt] = 415.0;
    let m = p.step(&v, &[], 1e4).unwrap();
    let pb = m.p_vsc[batt];
    assert!(pb < -1e3, "{pb}");
    let want = 0.4 - 60.0 * chemical_power(&pack, 0.4, pb) / pack.e_max;
    assert!(m.soc[1] > 0.4);
    assert!((m.soc[1] - want).abs() < 1e-12, "{} vs {want}", m.soc[1]);
}

#[test]
fn audit_balances_with_load_power_from_bus_voltage() {
    let mut p = plant(0.6);
    for (load, vq) in [(2e4, 0.0), (6e4, 15.0), (9e4, -20.0)] {
        let v = DVector::from_vec(vec![420.0, vq]);
        let m = p.step(&v, &[], load).unwrap();
        let r = load_resistance(load, 415.0);
        let load_power = m.v_bus[1].magnitude().powi(2) / r;
        assert!((load_power - m.load_power).abs() <= 1e-9 * load_power);
        let residual = m.p_vsc[0] - load_power - m.losses.filter - m.losses.line;
        assert!(residual.abs() <= 1e-6 * m.p_vsc[0], "{residual}");
        assert!(m.audit_residual < 1e-6);
    }
}

#[test]
fn soc_stays_in_unit_interval() {
    let mut p = plant(0.002);
    let v = DVector::from_vec(vec![415.0, 0.0]);
    let m = p.step(&v, &[], 9e4).unwrap();
    assert!(m.flags.soc_clamped[0]);
    assert_eq!(m.soc[0], 0.0);
}

#[test]
fn pv_half_irradiance_is_about_half_power() {
    let panel = PanelParams::default();
    // Brute-force MPP by sweeping the terminal voltage.
    let sweep = |g: f64| {
        (0..=200_000)
            .map(|k| {
                let v = panel.voc * 1.2 * k as f64 / 200_000.0;
                v * panel.current(v, g, 25.0).max(0.0)
            })
            .fold(0.0, f64::max)
    };
    for g in [500.0, 1000.0] {
        let mpp = panel.mpp(g, 25.0);
        assert!((mpp - sweep(g)).abs() <= 1e-4 * mpp, "{g}: {mpp}");
    }
    let array = PvArray::new(panel, 1e5);
    assert!((array.power(1000.0, 25.0) - 1e5).abs() < 1e-6);
    let half = array.power(500.0, 25.0);
    assert!((half - 5e4).abs() <= 0.05 * 5e4, "{half}");
    assert_eq!(array.power(0.0, 25.0), 0.0);
}

#[test]
fn predictor_examples() {
    let mut p = Predictor::new(300.0, 60.0).unwrap();
    for v in [0.0, 1e4, 2e4, 3e4, 4e4] {
        p.observe(v);
    }
    assert_eq!(p.predict(3), vec![2e4; 3]);
    for _ in 0..5 {
        p.observe(4e4);
    }
    assert_eq!(p.predict(30), vec![4e4; 30]);
}

fn bundled() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/ieee13/scenario.toml");
    Scenario::load(&path).unwrap()
}

#[test]
fn bundled_pv_forecast_error_is_in_band() {
    let sc = bundled();
    let inputs = Inputs::build(&sc, sc.file.steps, sc.file.seed);
    let mut pred = Predictor::new(sc.file.predictor.window_s, sc.file.mpc.t_s).unwrap();
    for &v in &inputs.pv_history {
        pred.observe(v);
    }
    let mut se = 0.0;
    for &truth in &inputs.pv {
        se += (pred.predict(1)[0] - truth).powi(2);
        pred.observe(truth);
    }
    let n = inputs.pv.len() as f64;
    let mean = inputs.pv.iter().sum::<f64>() / n;
    let rmse = (se / n).sqrt() / mean;
    assert!((0.10..=0.15).contains(&rmse), "{rmse}");
}

#[test]
fn bundled_load_walk_respects_step_bound() {
    let sc = bundled();
    let bound = sc.file.load_walk.step_bound;
    let walked = generate_load_profile(&sc.load_base, bound, sc.file.seed);
    for k in 1..walked.len() {
        let f0 = walked.values[k - 1] / sc.load_base.values[k - 1];
        let f1 = walked.values[k] / sc.load_base.values[k];
        assert!((f1 / f0 - 1.0).abs() <= bound + 1e-12, "step {k}");
    }
    assert_eq!(
        walked.values,
        generate_load_profile(&sc.load_base, bound, sc.file.seed).values
    );
    assert_ne!(
        walked.values,
        generate_load_profile(&sc.load_base, bound, sc.file.seed + 1).values
    );
}
