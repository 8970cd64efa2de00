//! Regenerates the synthetic weather and load traces of the bundled ieee13
//! scenario: `cargo run -p mgmpc --example gen_ieee13 -- scenarios/ieee13`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use mgmpc::plant::pv::{PanelParams, PvArray};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROWS: usize = 605;
const START_MIN: f64 = 5.0 * 60.0 + 55.0;

fn clear_sky(minute: f64) -> f64 {
    // Sunrise 05:50, sunset 19:40.
    let x = (minute - 350.0) / (1180.0 - 350.0);
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    1000.0 * (PI * x).sin().powf(1.25)
}

fn ambient(minute: f64) -> f64 {
    let h = minute / 60.0;
    18.0 + 12.0 * (PI * (h - 6.0) / 14.0).sin().max(0.0)
}

/// Hourly knots of total load, kW.
const LOAD_KNOTS: [(f64, f64); 12] = [
    (5.0, 38.0),
    (6.0, 40.0),
    (7.0, 50.0),
    (8.0, 54.0),
    (9.0, 47.0),
    (10.0, 44.0),
    (11.0, 46.0),
    (12.0, 51.0),
    (13.0, 49.0),
    (14.0, 44.0),
    (15.0, 43.0),
    (17.0, 48.0),
];

fn load_kw(minute: f64) -> f64 {
    let h = minute / 60.0;
    for w in LOAD_KNOTS.windows(2) {
        let ((h0, p0), (h1, p1)) = (w[0], w[1]);
        if h >= h0 && h <= h1 {
            return p0 + (p1 - p0) * (h - h0) / (h1 - h0);
        }
    }
    LOAD_KNOTS[LOAD_KNOTS.len() - 1].1
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios/ieee13".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(815);

    // Two-state cloud process: clouds appear more often after 11:30 and
    // each event dims the sky by a random depth.
    let mut cloudy = false;
    let mut depth: f64 = 0.0;
    let mut shade = 1.0;
    let mut weather = String::from("t_s,irradiance_wm2,temp_c\n");
    let mut load = String::from("t_s,total_kw\n");
    let array = PvArray::new(PanelParams::default(), 1e5);
    let mut pv = Vec::with_capacity(ROWS);
    for k in 0..ROWS {
        let minute = START_MIN + k as f64;
        let p_on = if minute > 690.0 { 0.04 } else { 0.012 };
        if cloudy {
            if rng.random_bool(0.22) {
                cloudy = false;
            }
        } else if rng.random_bool(p_on) {
            cloudy = true;
            depth = rng.random_range(0.3..0.75);
        }
        let target = if cloudy { 1.0 - depth } else { 1.0 };
        shade += 0.6 * (target - shade);
        let g = (clear_sky(minute) * shade * (1.0 + rng.random_range(-0.01..0.01))).max(0.0);
        // Cell temperature from ambient plus irradiance heating.
        let t_cell = ambient(minute) + 0.03 * g;
        let _ = writeln!(weather, "{},{:.2},{:.2}", 60 * k, g, t_cell);
        let _ = writeln!(load, "{},{:.3}", 60 * k, load_kw(minute));
        pv.push(array.power(g, t_cell));
    }
    std::fs::write(dir.join("pv_weather.csv"), weather).expect("write weather");
    std::fs::write(dir.join("load.csv"), load).expect("write load");

    // One-step forecast error of a five-sample moving average.
    let mut se = 0.0;
    for k in 5..ROWS {
        let f = pv[k - 5..k].iter().sum::<f64>() / 5.0;
        se += (f - pv[k]).powi(2);
    }
    let n = (ROWS - 5) as f64;
    let mean = pv[5..].iter().sum::<f64>() / n;
    let peak = pv.iter().cloned().fold(0.0, f64::max);
    println!(
        "pv mean {:.1} kW, peak {:.1} kW, forecast rmse {:.1}%",
        mean / 1e3,
        peak / 1e3,
        100.0 * (se / n).sqrt() / mean
    );
}
