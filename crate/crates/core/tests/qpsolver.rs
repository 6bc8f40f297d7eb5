use nalgebra::{DMatrix, DVector};
use polycbf::qpsolver::{solve_lp, solve_qp, ActiveSetSolver, QpProblem, QpStatus};
use proptest::prelude::*;

/// Random convex QP with a known feasible point, so it is never infeasible.
fn qp_strategy() -> impl Strategy<Value = QpProblem> {
    (2usize..7, 0usize..3, 1usize..9, any::<bool>(), any::<u64>()).prop_map(|(n, me, mi, strict, seed)| {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let me = me.min(n - 1);
        let l = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let mut p = &l * l.transpose();
        if strict {
            p += DMatrix::identity(n, n) * 0.1;
        } else {
            // rank-deficient: zero one direction
            p.row_mut(0).fill(0.0);
            p.column_mut(0).fill(0.0);
        }
        let mut prob = QpProblem::new(n);
        prob.p = p;
        prob.q = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let x0 = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        prob.a_eq = DMatrix::from_fn(me, n, |_, _| r.random_range(-1.0..1.0));
        prob.b_eq = &prob.a_eq * &x0;
        prob.a_in = DMatrix::from_fn(mi, n, |_, _| r.random_range(-1.0..1.0));
        prob.b_in = &prob.a_in * &x0 + DVector::from_fn(mi, |_, _| r.random_range(0.0..1.0));
        // boxes keep the rank-deficient case bounded
        prob.lb = DVector::from_element(n, -5.0);
        prob.ub = DVector::from_element(n, 5.0);
        prob
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kkt_holds_at_solution(prob in qp_strategy()) {
        let sol = solve_qp(&prob).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(prob.max_violation(&sol.x) <= 1e-8);
        prop_assert!(sol.stationarity_residual(&prob) <= 1e-7);
        prop_assert!(sol.dual_in.iter().all(|&v| v >= -1e-9));
        prop_assert!(sol.dual_lb.iter().chain(sol.dual_ub.iter()).all(|&v| v >= -1e-9));
        // complementary slackness
        let s = &prob.a_in * &sol.x - &prob.b_in;
        for k in 0..s.len() {
            prop_assert!((sol.dual_in[k] * s[k]).abs() <= 1e-7);
        }
    }

    #[test]
    fn dual_bounds_primal(prob in qp_strategy()) {
        let sol = solve_qp(&prob).unwrap();
        let d = sol.dual_objective(&prob);
        prop_assert!(d <= sol.objective + 1e-6 * (1.0 + sol.objective.abs()));
        prop_assert!((d - sol.objective).abs() <= 1e-6 * (1.0 + sol.objective.abs()));
    }

    #[test]
    fn optimum_beats_feasible_perturbations(prob in qp_strategy(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let sol = solve_qp(&prob).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let y = &sol.x + DVector::from_fn(sol.x.len(), |_, _| r.random_range(-0.1..0.1));
            if prob.max_violation(&y) <= 0.0 {
                prop_assert!(prob.objective(&y) >= sol.objective - 1e-9);
            }
        }
    }

    #[test]
    fn repeated_solves_are_identical(prob in qp_strategy()) {
        let mut s = ActiveSetSolver::new();
        let a = s.solve(&prob).unwrap();
        let b = s.solve(&prob).unwrap();
        let c = solve_qp(&prob).unwrap();
        prop_assert_eq!(&a.x, &b.x);
        prop_assert_eq!(&a.x, &c.x);
        prop_assert_eq!(&a.dual_in, &c.dual_in);
    }
}

#[test]
fn infeasible_and_unbounded_are_reported() {
    let mut prob = QpProblem::new(1);
    prob.a_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    prob.b_in = DVector::from_vec(vec![-1.0, -1.0]);
    assert_eq!(solve_qp(&prob).unwrap().status, QpStatus::Infeasible);

    let mut lp = QpProblem::new(2);
    lp.q = DVector::from_vec(vec![-1.0, 0.0]);
    lp.lb = DVector::zeros(2);
    assert_eq!(solve_lp(&lp).unwrap().status, QpStatus::Unbounded);
}

#[test]
fn lp_vertex_solution() {
    // max x + y s.t. x + 2y ≤ 4, 3x + y ≤ 6, x, y ≥ 0 → (1.6, 1.2)
    let mut lp = QpProblem::new(2);
    lp.q = DVector::from_vec(vec![-1.0, -1.0]);
    lp.a_in = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
    lp.b_in = DVector::from_vec(vec![4.0, 6.0]);
    lp.lb = DVector::zeros(2);
    let sol = solve_lp(&lp).unwrap();
    assert!((sol.x[0] - 1.6).abs() < 1e-10 && (sol.x[1] - 1.2).abs() < 1e-10);
    assert!((sol.dual_in[0] - 0.4).abs() < 1e-10 && (sol.dual_in[1] - 0.2).abs() < 1e-10);
}
