use nalgebra::DMatrix;
use proptest::prelude::*;
use qcqp::{
    solve, solve_with, text, verify_kkt, LinearEq, QcqpError, QcqpProblem, QuadIneq, SolverOptions, SparseVec, Status,
    SymMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-8;

fn sym_from_dense(m: &DMatrix<f64>) -> SymMatrix {
    let vars: Vec<usize> = (0..m.nrows()).collect();
    let mut s = SymMatrix::new();
    s.add_block(&vars, m);
    s
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let f = DMatrix::from_fn(rank, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    f.transpose() * f
}

/// Random convex QCQP over the box [-1, 1]ⁿ with a strictly feasible point.
fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> QcqpProblem {
    let mut p = QcqpProblem::new(n);
    let rank = rng.random_range(0..=n);
    p.objective.q = sym_from_dense(&random_psd(rng, n, rank));
    p.objective.c = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    p.lower = vec![-1.0; n];
    p.upper = vec![1.0; n];
    let x0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    for _ in 0..rng.random_range(1..=2) {
        let r = rng.random_range(1..=n);
        let pm = random_psd(rng, n, r);
        let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut c = QuadIneq {
            p: sym_from_dense(&pm),
            q: SparseVec::from_dense(&q),
            s: 0.0,
        };
        let at_x0 = c.value(&x0);
        c.s = -at_x0 - 0.05 - 0.3 * rng.random::<f64>();
        p.quad_ineq.push(c);
    }
    if rng.random::<f64>() < 0.5 {
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let b = a.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>() + 0.2;
        p.quad_ineq.push(QuadIneq::linear(SparseVec::from_dense(&a), -b));
    }
    p
}

/// Minimum objective over feasible points of a uniform grid on [-1, 1]ⁿ.
fn grid_optimum(p: &QcqpProblem, per_axis: usize) -> Option<f64> {
    let n = p.n;
    let h = 2.0 / (per_axis - 1) as f64;
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut best: Option<f64> = None;
    loop {
        for i in 0..n {
            x[i] = -1.0 + h * idx[i] as f64;
        }
        if p.quad_ineq.iter().all(|c| c.value(&x) <= 0.0) {
            let f = p.objective_value(&x);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[test]
fn active_bound() {
    let mut p = QcqpProblem::new(1);
    p.objective.q.push(0, 0, 2.0);
    p.lower[0] = 1.0;
    let sol = solve(&p, TOL).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.x[0] - 1.0).abs() < 1e-7, "{:?}", sol.x);
    assert!((sol.duals.lower[0] - 2.0).abs() < 1e-6);
}

#[test]
fn linear_objective_on_disk() {
    let mut p = QcqpProblem::new(2);
    p.objective.c = vec![1.0, 1.0];
    let mut disk = SymMatrix::new();
    disk.push(0, 0, 2.0);
    disk.push(1, 1, 2.0);
    p.quad_ineq.push(QuadIneq {
        p: disk,
        q: SparseVec::new(),
        s: -2.0,
    });
    let sol = solve(&p, TOL).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.x[0] + 1.0).abs() < 1e-7 && (sol.x[1] + 1.0).abs() < 1e-7);
    assert!((sol.objective + 2.0).abs() < 1e-7);
    // Stationarity: c + μ P x = 0 with x = (−1, −1) gives μ = 1/2.
    assert!((sol.duals.ineq[0] - 0.5).abs() < 1e-6);
}

#[test]
fn rotated_cone_with_linear_term() {
    // minimise −y  s.t.  x² − x + y ≤ 0,  i.e. y ≤ x − x², maximised at x = ½.
    let mut p = QcqpProblem::new(2);
    p.objective.c = vec![0.0, -1.0];
    let mut pm = SymMatrix::new();
    pm.push(0, 0, 2.0);
    p.quad_ineq.push(QuadIneq {
        p: pm,
        q: SparseVec::from_pairs(vec![(0, -1.0), (1, 1.0)]),
        s: 0.0,
    });
    let sol = solve(&p, TOL).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.x[0] - 0.5).abs() < 1e-6);
    assert!((sol.x[1] - 0.25).abs() < 1e-7);
}

#[test]
fn equalities_and_fixed_variables() {
    // minimise x² + y² + z²  s.t.  x + y + z = 3,  z fixed at 2.
    let mut p = QcqpProblem::new(3);
    for i in 0..3 {
        p.objective.q.push(i, i, 2.0);
    }
    p.eq.push(LinearEq::new(
        SparseVec::from_pairs(vec![(0, 1.0), (1, 1.0), (2, 1.0)]),
        3.0,
    ));
    p.lower[2] = 2.0;
    p.upper[2] = 2.0;
    let sol = solve(&p, TOL).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    for (got, want) in sol.x.iter().zip([0.5, 0.5, 2.0]) {
        assert!((got - want).abs() < 1e-7, "{:?}", sol.x);
    }
    assert!(sol.kkt.within(TOL));
}

#[test]
fn infeasible_box_and_ball() {
    // x ≥ 2 and x² ≤ 1.
    let mut p = QcqpProblem::new(1);
    p.lower[0] = 2.0;
    let mut pm = SymMatrix::new();
    pm.push(0, 0, 2.0);
    p.quad_ineq.push(QuadIneq {
        p: pm,
        q: SparseVec::new(),
        s: -1.0,
    });
    assert_eq!(solve(&p, TOL).unwrap().status, Status::Infeasible);
}

#[test]
fn infeasible_linear_system() {
    let mut p = QcqpProblem::new(2);
    p.objective.c = vec![1.0, 0.0];
    p.quad_ineq
        .push(QuadIneq::linear(SparseVec::from_pairs(vec![(0, 1.0), (1, 1.0)]), -1.0));
    p.quad_ineq
        .push(QuadIneq::linear(SparseVec::from_pairs(vec![(0, -1.0), (1, -1.0)]), 2.0));
    p.lower = vec![-5.0; 2];
    p.upper = vec![5.0; 2];
    assert_eq!(solve(&p, TOL).unwrap().status, Status::Infeasible);
}

#[test]
fn ball_with_positive_offset_is_infeasible() {
    let mut p = QcqpProblem::new(1);
    let mut pm = SymMatrix::new();
    pm.push(0, 0, 1.0);
    p.quad_ineq.push(QuadIneq {
        p: pm,
        q: SparseVec::new(),
        s: 0.5,
    });
    assert_eq!(solve(&p, TOL).unwrap().status, Status::Infeasible);
}

#[test]
fn rejects_non_psd_data() {
    let mut p = QcqpProblem::new(2);
    p.objective.q.push(0, 0, 1.0);
    p.objective.q.push(1, 1, -1.0);
    assert!(matches!(solve(&p, TOL), Err(QcqpError::NotPsd { .. })));
}

#[test]
fn unbounded_problem_does_not_claim_optimality() {
    let mut p = QcqpProblem::new(1);
    p.objective.c = vec![1.0];
    let sol = solve(&p, TOL).unwrap();
    assert_ne!(sol.status, Status::Optimal);
}

#[test]
fn matches_grid_search_on_fuzzed_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..60 {
        let n = rng.random_range(1..=4);
        let p = random_problem(&mut rng, n);
        let sol = solve(&p, TOL).unwrap();
        assert_eq!(sol.status, Status::Optimal, "trial {trial}");
        assert!(sol.kkt.within(TOL), "trial {trial}: {:?}", sol.kkt);
        assert!(p.max_violation(&sol.x) <= 1e-7, "trial {trial}");
        let per_axis = match n {
            1 => 2001,
            2 => 201,
            3 => 41,
            _ => 17,
        };
        if let Some(grid) = grid_optimum(&p, per_axis) {
            assert!(
                sol.objective <= grid + 1e-7,
                "trial {trial}: solver {} grid {grid}",
                sol.objective
            );
        }
    }
}

#[test]
fn warm_start_does_not_change_the_answer() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let p = random_problem(&mut rng, 3);
        let cold = solve(&p, TOL).unwrap();
        let warm = solve_with(
            &p,
            &SolverOptions {
                warm_start: Some(vec![0.3, -0.9, 0.1]),
                ..SolverOptions::default()
            },
        )
        .unwrap();
        assert_eq!(warm.status, Status::Optimal);
        assert!((warm.objective - cold.objective).abs() < 1e-6);
    }
}

#[test]
fn dumped_problem_solves_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_problem(&mut rng, 4);
    let q = text::load(&text::dump(&p)).unwrap();
    let (a, b) = (solve(&p, TOL).unwrap(), solve(&q, TOL).unwrap());
    assert_eq!(a.x, b.x);
    assert_eq!(a.duals, b.duals);
}

#[test]
fn reported_residuals_are_recomputable() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = random_problem(&mut rng, 4);
    let sol = solve(&p, TOL).unwrap();
    assert_eq!(verify_kkt(&p, &sol.x, &sol.duals), sol.kkt);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimum_beats_feasible_samples(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n);
        let sol = solve(&p, TOL).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        for _ in 0..200 {
            let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            if p.max_violation(&z) <= 0.0 {
                prop_assert!(sol.objective <= p.objective_value(&z) + TOL);
            }
        }
    }

    #[test]
    fn duality_gap_is_small(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, n);
        let sol = solve(&p, TOL).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        // Complementary slackness summed over all constraints.
        let mut gap = 0.0;
        for (c, mu) in p.quad_ineq.iter().zip(&sol.duals.ineq) {
            gap += (mu * c.value(&sol.x)).abs();
        }
        for i in 0..n {
            gap += (sol.duals.lower[i] * (sol.x[i] - p.lower[i])).abs();
            gap += (sol.duals.upper[i] * (p.upper[i] - sol.x[i])).abs();
        }
        prop_assert!(gap <= 10.0 * TOL * (1.0 + sol.objective.abs()));
    }

    #[test]
    fn argmin_is_invariant_to_objective_scaling(seed in any::<u64>(), alpha in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, 3);
        let mut scaled = p.clone();
        for e in scaled.objective.q.entries.iter_mut() {
            e.2 *= alpha;
        }
        for c in scaled.objective.c.iter_mut() {
            *c *= alpha;
        }
        let (a, b) = (solve(&p, TOL).unwrap(), solve(&scaled, TOL).unwrap());
        prop_assert_eq!(b.status, Status::Optimal);
        // Argmin can be non-unique when Q is singular; compare objectives
        // in the original scale instead of points in that case.
        prop_assert!((p.objective_value(&b.x) - a.objective).abs() <= 1e-6 * (1.0 + a.objective.abs()));
    }

    #[test]
    fn replay_is_bit_identical(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, 4);
        let (a, b) = (solve(&p, TOL).unwrap(), solve(&p, TOL).unwrap());
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.duals, b.duals);
        prop_assert_eq!(a.iterations, b.iterations);
    }
}
