mod support;

use bess_lp::{check_feasible, solve, LpProblem, LpStatus, SolverOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::vertex::{random_lp, vertex_minimum, DenseLp};

fn to_problem(d: &DenseLp) -> LpProblem {
    LpProblem::from_dense(&d.c, &d.a_eq, &d.b_eq, &d.a_ub, &d.b_ub, &d.lower, &d.upper).unwrap()
}

#[test]
fn matches_vertex_enumeration_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..150 {
        let d = random_lp(&mut rng, 6, 6);
        let oracle = vertex_minimum(&d).expect("generator guarantees feasibility");
        let sol = solve(&to_problem(&d), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal, "case {case}");
        let rel = (sol.objective - oracle).abs() / oracle.abs().max(1.0);
        assert!(rel <= 1e-6, "case {case}: solver {} oracle {}", sol.objective, oracle);
    }
}

#[test]
fn objective_respects_dual_certificates() {
    // min c·x, A x <= b, l <= x <= u: any y >= 0 gives
    // c·x >= sum_j min(r_j l_j, r_j u_j) - y·b  with r = c + Aᵀy.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let mut d = random_lp(&mut rng, 6, 6);
        d.a_ub.append(&mut d.a_eq);
        let b_eq: Vec<f64> = d.b_eq.drain(..).collect();
        d.b_ub.extend(b_eq);
        let sol = solve(&to_problem(&d), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        for _ in 0..20 {
            let y: Vec<f64> = (0..d.b_ub.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
            let n = d.c.len();
            let mut bound = -y.iter().zip(&d.b_ub).map(|(y, b)| y * b).sum::<f64>();
            for j in 0..n {
                let r = d.c[j] + d.a_ub.iter().zip(&y).map(|(row, y)| row[j] * y).sum::<f64>();
                bound += (r * d.lower[j]).min(r * d.upper[j]);
            }
            assert!(sol.objective >= bound - 1e-9, "{} < {}", sol.objective, bound);
        }
    }
}

proptest! {
    #[test]
    fn optimal_points_pass_feasibility_check(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_lp(&mut rng, 6, 6);
        let lp = to_problem(&d);
        let sol = solve(&lp, &SolverOptions::default()).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        let report = check_feasible(&lp, &sol.x).unwrap();
        prop_assert!(report.is_feasible(1e-7), "{}", report);
        prop_assert!((lp.objective_value(&sol.x) - sol.objective).abs() < 1e-12);
    }

    #[test]
    fn warm_start_agrees_with_cold_start(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_lp(&mut rng, 6, 6);
        let lp = to_problem(&d);
        let cold = solve(&lp, &SolverOptions::default()).unwrap();
        // perturb the objective and reuse the basis
        let mut d2 = d;
        for c in d2.c.iter_mut() { *c += rng.gen_range(-0.3..0.3); }
        let lp2 = to_problem(&d2);
        let warm = bess_lp::solve_from(&lp2, &SolverOptions::default(), Some(&cold.basis)).unwrap();
        let fresh = solve(&lp2, &SolverOptions::default()).unwrap();
        prop_assert_eq!(warm.status, LpStatus::Optimal);
        prop_assert!((warm.objective - fresh.objective).abs() <= 1e-7 * fresh.objective.abs().max(1.0));
    }
}
