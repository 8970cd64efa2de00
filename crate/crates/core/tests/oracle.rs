use mgmpc::mpc::{EfficiencyMode, HorizonProblem, Mpc, MpcBattery, MpcConfig, Predictions};
use mgmpc::netmodel::NetworkTopology;
use mgmpc::oracle::{convex_multipliers, gap, solve_local, LocalOptions, LocalStatus, Multipliers, NonconvexProblem};
use qcqp::{solve, LinearEq, SparseVec, Status};

const TOPO: &str = r#"
frequency_hz = 50.0
buses = ["a", "b"]

[[lines]]
from = "a"
to = "b"
r_ohm = 0.08
l_henry = 1.5e-4

[[loads]]
bus = "a"
r_ohm = 1e9
[[loads]]
bus = "b"
r_ohm = 1e9

[[vscs]]
name = "batt_a"
bus = "a"
kind = "battery"
r_f = 0.15
l_f = 3.8e-3
c_f = 680e-6
r_c = 0.05
l_c = 300e-6

[[vscs]]
name = "batt_b"
bus = "b"
kind = "battery"
r_f = 0.15
l_f = 3.8e-3
c_f = 680e-6
r_c = 0.05
l_c = 300e-6
"#;

fn horizon(n_p: usize, load: f64) -> (HorizonProblem, MpcConfig) {
    let topo = NetworkTopology::from_toml_str(TOPO).unwrap();
    let batteries = (0..2)
        .map(|vsc| MpcBattery {
            vsc,
            e_max: 3.6e8,
            p_ch_max: 1e5,
            p_dis_max: 1e5,
        })
        .collect();
    let cfg = MpcConfig {
        n_p,
        ..MpcConfig::default()
    };
    let soc = vec![0.3, 0.8];
    let mut mpc = Mpc::new(
        topo,
        batteries,
        cfg.clone(),
        EfficiencyMode::constant_default(),
        soc.clone(),
    )
    .unwrap();
    let preds = Predictions {
        p_mpp: vec![],
        p_cpl: vec![],
        load_total: vec![load; n_p],
    };
    let (_, hp) = mpc.step(&soc, &[0.0, 0.0], &preds).unwrap();
    (hp, cfg)
}

fn local(hp: &HorizonProblem, cfg: &MpcConfig) -> (NonconvexProblem, mgmpc::oracle::LocalSolution) {
    let nc = NonconvexProblem::from_horizon(hp, cfg);
    let sol = solve(&hp.problem, 1e-8).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let mult = convex_multipliers(hp, &nc, &sol.x, &sol.duals);
    let out = solve_local(&nc, &sol.x, mult, &LocalOptions::default());
    (nc, out)
}

/// Best objective with the voltages pinned at `v`: the bilinear powers
/// become constants and the rest is a convex program.
fn pinned_optimum(nc: &NonconvexProblem, v: &[f64]) -> Option<f64> {
    let vars = nc.layout.v_block(0);
    let mut mag_ok = true;
    for &(d, q) in &nc.floors {
        let (vd, vq) = (
            v[vars.iter().position(|&i| i == d).unwrap()],
            v[vars.iter().position(|&i| i == q).unwrap()],
        );
        mag_ok &= vd * vd + vq * vq >= nc.v_min * nc.v_min;
    }
    if !mag_ok {
        return None;
    }
    let mut p = nc.base.clone();
    let mut x = vec![0.0; p.n];
    for (t, &i) in vars.iter().enumerate() {
        p.lower[i] = v[t];
        p.upper[i] = v[t];
        x[i] = v[t];
    }
    for b in &nc.bilinear {
        let a = SparseVec::from_pairs(vec![(b.p_dis, 1.0), (b.p_ch, -1.0)]);
        p.eq.push(LinearEq::new(a, b.power(&x)));
    }
    match solve(&p, 1e-9) {
        Ok(s) if s.status == Status::Optimal => Some(s.objective),
        _ => None,
    }
}

fn grid_best(nc: &NonconvexProblem, center: [f64; 4], half: [f64; 4], per_axis: usize) -> (f64, [f64; 4]) {
    let mut best = (f64::INFINITY, center);
    let step = |a: usize, j: usize| center[a] - half[a] + 2.0 * half[a] * j as f64 / (per_axis - 1) as f64;
    for i0 in 0..per_axis {
        for i1 in 0..per_axis {
            for i2 in 0..per_axis {
                for i3 in 0..per_axis {
                    let v = [step(0, i0), step(1, i1), step(2, i2), step(3, i3)];
                    if let Some(f) = pinned_optimum(nc, &v) {
                        if f < best.0 {
                            best = (f, v);
                        }
                    }
                }
            }
        }
    }
    best
}

#[test]
fn local_solution_matches_grid_search() {
    let (hp, cfg) = horizon(1, 4e4);
    let (nc, out) = local(&hp, &cfg);
    assert_eq!(out.status, LocalStatus::Converged, "{out:?}");
    let (coarse, at) = grid_best(&nc, [1.0, 0.0, 1.0, 0.0], [0.1, 0.1, 0.1, 0.1], 7);
    assert!(coarse.is_finite());
    let h = 0.2 / 6.0;
    let (fine, _) = grid_best(&nc, at, [h; 4], 7);
    let best = coarse.min(fine);
    assert!(out.objective <= best + 1e-9, "local {} grid {best}", out.objective);
    assert!(
        best - out.objective <= 1e-3 * best.abs(),
        "local {} grid {best}",
        out.objective
    );
}

#[test]
fn local_solution_satisfies_the_exact_constraints() {
    let (hp, cfg) = horizon(3, 6e4);
    let (nc, out) = local(&hp, &cfg);
    assert_eq!(out.status, LocalStatus::Converged);
    assert!(out.bilinear_violation <= 1e-6, "{}", out.bilinear_violation);
    assert!(out.floor_violation <= 1e-6);
    assert!(nc.base.max_violation(&out.x) <= 1e-6);
    assert!((nc.objective(&out.x) - out.objective).abs() <= 1e-12 * (1.0 + out.objective.abs()));
}

#[test]
fn restart_from_a_solution_stops_at_once() {
    let (hp, cfg) = horizon(2, 5e4);
    let (nc, out) = local(&hp, &cfg);
    let again = solve_local(&nc, &out.x, Multipliers::zeros(&nc), &LocalOptions::default());
    assert_eq!(again.status, LocalStatus::Converged);
    assert!(again.iterations <= 2, "{}", again.iterations);
    assert!((again.objective - out.objective).abs() <= 1e-7 * (1.0 + out.objective.abs()));
}

#[test]
fn exact_model_never_loses_to_its_relaxation_start_by_much() {
    // The convex solution is not feasible for the exact problem, but the
    // local optimum from it should land near the same loss level.
    let (hp, cfg) = horizon(2, 5e4);
    let sol = solve(&hp.problem, 1e-8).unwrap();
    let (_, out) = local(&hp, &cfg);
    let rel = (out.objective - sol.objective).abs() / sol.objective.abs();
    assert!(rel < 0.2, "{rel}");
}

#[test]
fn gap_is_relative_to_the_convex_loss() {
    assert!((gap(10.0, 9.0) - 0.1).abs() < 1e-15);
    assert!(gap(8.0, 8.4) < 0.0);
}
