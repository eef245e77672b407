//! Solver gradients and optima against finite differences and enumeration.

use mpc_distill::dynamics::{ModelConfig, ParamVec, StateVec};
use mpc_distill::ocp::{brute_force_ocp, cost, cost_and_adjoint_gradient, cost_gradient, solve_ocp, OcpProblem, SolverOptions};

#[test]
fn adjoint_gradient_matches_fourth_order_differences() {
    let cfg = ModelConfig::default();
    let w = ParamVec::new(1.2e4, 350.0, 0.6);
    let x0 = StateVec::new(0.3, 0.08, 0.15);
    let u = [0.2, 0.31];
    let (_, grad) = cost_and_adjoint_gradient(&u, x0, &w, &cfg).unwrap();
    let h = 1e-4;
    for k in 0..2 {
        let f = |d: f64| {
            let mut v = u;
            v[k] += d;
            cost(&v, x0, &w, &cfg).unwrap()
        };
        let oracle = (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
        assert!((grad[k] - oracle).abs() <= 1e-5 * oracle.abs(), "{k}: {} vs {oracle}", grad[k]);
    }
    let fd = cost_gradient(&u, x0, &w, &cfg, 1e-6).unwrap();
    for k in 0..2 {
        assert!((fd[k] - grad[k]).abs() <= 1e-5 * grad[k].abs());
    }
}

#[test]
fn solver_dominates_every_grid_sequence() {
    let cfg = ModelConfig::default();
    let grid = [0.049, 0.11, 0.449];
    for (x0, w) in [
        (StateVec::new(0.4, 0.02, 0.1), ParamVec::NOMINAL),
        (StateVec::new(0.1, 0.15, 0.22), ParamVec::new(5e3, 600.0, 0.4)),
    ] {
        let problem = OcpProblem::new(x0, w, 3, cfg.clone());
        let mut best = f64::INFINITY;
        for a in grid {
            for b in grid {
                for c in grid {
                    best = best.min(problem.cost(&[a, b, c]).unwrap());
                }
            }
        }
        let (_, brute) = brute_force_ocp(&problem, &grid).unwrap();
        assert_eq!(brute, best);
        let sol = solve_ocp(&problem, &SolverOptions::default()).unwrap();
        assert!(sol.j_star <= best + 1e-6, "{} > {best}", sol.j_star);
    }
}
