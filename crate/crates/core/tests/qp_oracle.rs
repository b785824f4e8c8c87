//! Production safety-QP solutions checked against the independent
//! geometric solver on randomly drawn, well-posed instances.
//!
//! Instances are lifted into barrier problems over a scalar state pinned
//! at the origin: with `p = [1]`, `q = -b / eta` and zero drift, the
//! decay row of each barrier reproduces the drawn row `a . u >= b`
//! exactly, so the whole production path (row assembly, box handling,
//! slack, active-set solve) is exercised, not just the inner solver.

use lanelab_core::cbf::{solve_relaxed, solve_strict, AffineBarrier, QpProblem};
use lanelab_testkit::qp_oracle::{self, OracleInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const ETA: f64 = 0.1;

fn lift(inst: &OracleInstance) -> QpProblem {
    let dim = inst.u_ref.len();
    // One state component per row: barrier i reads state i only, and
    // state i responds to the inputs through the row's coefficients.
    let n = inst.rows.len().max(1);
    let mut g_x = vec![vec![0.0; dim]; n];
    let mut barriers = Vec::with_capacity(inst.rows.len());
    for (i, (a, b)) in inst.rows.iter().enumerate() {
        g_x[i] = a.clone();
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        barriers.push(AffineBarrier::new(p, -b / ETA, ETA).unwrap());
    }
    QpProblem {
        x: vec![0.0; n],
        f_x: vec![0.0; n],
        g_x,
        u_ref: inst.u_ref.clone(),
        input_box: inst.bounds.clone(),
        barriers,
        w_bound: vec![0.0; n],
        big_m: inst.big_m,
    }
}

#[test]
fn strict_solver_matches_the_geometric_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(41);
    let mut feasible = 0;
    let mut infeasible = 0;
    for k in 0..120 {
        let dim = 1 + k % 2;
        let inst = qp_oracle::random_instance(&mut rng, dim);
        let prob = lift(&inst);
        let sol = solve_strict(&prob).unwrap();
        match qp_oracle::strict(&inst.u_ref, &inst.bounds, &inst.rows) {
            Some(oracle) => {
                feasible += 1;
                assert!(sol.feasible, "instance {k}: production says infeasible");
                assert!(
                    (sol.objective - oracle.objective).abs() <= 1e-6,
                    "instance {k}: objective {} vs oracle {}",
                    sol.objective,
                    oracle.objective
                );
                for (a, b) in sol.u.iter().zip(&oracle.u) {
                    assert!((a - b).abs() <= 1e-6, "instance {k}: u {:?} vs {:?}", sol.u, oracle.u);
                }
            }
            None => {
                infeasible += 1;
                assert!(!sol.feasible, "instance {k}: production says feasible");
            }
        }
    }
    assert!(feasible >= 20, "only {feasible} feasible draws");
    assert!(infeasible >= 20, "only {infeasible} infeasible draws");
}

#[test]
fn relaxed_solver_matches_the_geometric_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let mut spent_slack = 0;
    for k in 0..120 {
        let dim = 1 + k % 2;
        let inst = qp_oracle::random_instance(&mut rng, dim);
        let prob = lift(&inst);
        let sol = solve_relaxed(&prob).unwrap();
        let oracle = qp_oracle::relaxed(&inst.u_ref, &inst.bounds, &inst.rows, inst.big_m)
            .expect("nonempty box");
        assert!(
            (sol.objective - oracle.objective).abs() <= 1e-6,
            "instance {k}: objective {} vs oracle {} (zeta {} vs {})",
            sol.objective,
            oracle.objective,
            sol.zeta,
            oracle.zeta
        );
        // The slack itself sits on a plateau of width ~sqrt(eps) for the
        // oracle's search, so it is only compared coarsely.
        assert!((sol.zeta - oracle.zeta).abs() <= 1e-4, "instance {k}");
        if sol.zeta > 1e-7 {
            spent_slack += 1;
        }
    }
    assert!(spent_slack >= 20, "only {spent_slack} draws ever spent slack");
}

#[test]
fn relaxed_never_beats_strict_and_agrees_when_strict_holds() {
    let mut rng = ChaCha12Rng::seed_from_u64(43);
    for k in 0..80 {
        let dim = 1 + k % 2;
        let inst = qp_oracle::random_instance(&mut rng, dim);
        let prob = lift(&inst);
        let strict = solve_strict(&prob).unwrap();
        let relaxed = solve_relaxed(&prob).unwrap();
        if strict.feasible {
            assert!(relaxed.zeta <= 1e-7, "instance {k}: slack spent despite feasibility");
            assert!(
                (relaxed.objective - strict.objective).abs() <= 1e-6,
                "instance {k}: {} vs {}",
                relaxed.objective,
                strict.objective
            );
        } else {
            assert!(relaxed.zeta > 1e-7, "instance {k}: infeasible but no slack spent");
        }
    }
}
