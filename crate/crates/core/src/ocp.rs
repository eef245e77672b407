//! Finite-horizon economic optimal control by direct single shooting.
//!
//! Decision variables are the `N` controls; states come from forward
//! simulation. The objective is `J(u | x0, w) = -sum_{i=1..N} x2_i`. The
//! minimizer is a projected limited-memory quasi-Newton method on the box
//! `[u_min, u_max]^N`, restarted from several initial profiles.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, ModelConfig, ParamVec, StateVec};
use crate::error::{Error, Result};

/// Largest grid enumeration accepted by [`brute_force_ocp`].
pub const BRUTE_FORCE_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    pub x0: StateVec,
    pub w: ParamVec,
    pub horizon: usize,
    pub model: ModelConfig,
}

impl OcpProblem {
    pub fn new(x0: StateVec, w: ParamVec, horizon: usize, model: ModelConfig) -> Self {
        Self {
            x0,
            w,
            horizon,
            model,
        }
    }

    pub fn cost(&self, u_seq: &[f64]) -> Result<f64> {
        cost(u_seq, self.x0, &self.w, &self.model)
    }
}

/// Initial control profile for one solver start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartProfile {
    Lower,
    Upper,
    Midpoint,
    Constant(f64),
    /// Componentwise uniform in the box.
    Random(u64),
}

impl StartProfile {
    pub fn materialize(&self, n: usize, cfg: &ModelConfig) -> Vec<f64> {
        match *self {
            StartProfile::Lower => vec![cfg.u_min; n],
            StartProfile::Upper => vec![cfg.u_max; n],
            StartProfile::Midpoint => vec![cfg.midpoint(); n],
            StartProfile::Constant(c) => vec![cfg.project(c); n],
            StartProfile::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.gen_range(cfg.u_min..=cfg.u_max)).collect()
            }
        }
    }
}

/// How the solver obtains the objective gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Exact gradient of the discretized objective by a backward sweep.
    Adjoint,
    /// Central differences, see [`cost_gradient`].
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step moves no control by more than this.
    pub step_tolerance: f64,
    /// Stop when the relative cost decrease over `stall_window` iterations falls below this.
    pub relative_improvement_tolerance: f64,
    pub stall_window: usize,
    /// Number of curvature pairs kept by the quasi-Newton update.
    pub memory: usize,
    /// Finite-difference step, relative to the box width.
    pub finite_difference_epsilon: f64,
    pub gradient: GradientMode,
    pub multistart: Vec<StartProfile>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-12,
            relative_improvement_tolerance: 1e-10,
            stall_window: 5,
            memory: 10,
            finite_difference_epsilon: 1e-6,
            gradient: GradientMode::Adjoint,
            multistart: vec![
                StartProfile::Lower,
                StartProfile::Upper,
                StartProfile::Midpoint,
                StartProfile::Random(0),
            ],
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("relative_improvement_tolerance", self.relative_improvement_tolerance),
            ("finite_difference_epsilon", self.finite_difference_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("solver.{name} must be > 0, got {v}")));
            }
        }
        if self.multistart.is_empty() {
            return Err(Error::Config("solver.multistart must not be empty".into()));
        }
        if self.stall_window == 0 {
            return Err(Error::Config("solver.stall_window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub u_star: Vec<f64>,
    pub j_star: f64,
    pub trajectory: Vec<StateVec>,
    pub converged: bool,
    /// Iterations summed over all starts.
    pub iterations: usize,
    /// Index of the start that produced `u_star`.
    pub start_index: usize,
    pub wall_time: f64,
}

/// Outcome of a single solver start.
#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub u: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Cost after each accepted iteration, starting with the projected initial profile.
    pub cost_history: Vec<f64>,
}

/// Economic cost `-sum_{i=1..N} x2_i` along the simulated trajectory.
pub fn cost(u_seq: &[f64], x0: StateVec, w: &ParamVec, cfg: &ModelConfig) -> Result<f64> {
    let traj = simulate(x0, u_seq, w, cfg)?;
    Ok(trajectory_cost(&traj))
}

/// Cost of an already simulated trajectory (the initial state is excluded).
pub fn trajectory_cost(traj: &[StateVec]) -> f64 {
    -traj.iter().skip(1).map(|x| x.x2).sum::<f64>()
}

/// Central finite-difference gradient of [`cost`].
///
/// The step is `eps * (u_max - u_min)`; perturbations leaving the box are
/// clipped, which turns the difference one-sided at the boundary.
pub fn cost_gradient(
    u_seq: &[f64],
    x0: StateVec,
    w: &ParamVec,
    cfg: &ModelConfig,
    eps: f64,
) -> Result<Vec<f64>> {
    let h = eps * cfg.box_width();
    let traj = simulate(x0, u_seq, w, cfg)?;
    let mut grad = Vec::with_capacity(u_seq.len());
    // u_k only influences states k+1.., so differences only need the tail.
    for k in 0..u_seq.len() {
        let up = (u_seq[k] + h).min(cfg.u_max);
        let dn = (u_seq[k] - h).max(cfg.u_min);
        let mut tail = u_seq[k..].to_vec();
        tail[0] = up;
        let f_up = cost(&tail, traj[k], w, cfg)?;
        tail[0] = dn;
        let f_dn = cost(&tail, traj[k], w, cfg)?;
        grad.push((f_up - f_dn) / (up - dn));
    }
    Ok(grad)
}

/// Cost and exact gradient of the discretized objective via a backward sweep
/// through the step Jacobians.
pub fn cost_and_adjoint_gradient(
    u_seq: &[f64],
    x0: StateVec,
    w: &ParamVec,
    cfg: &ModelConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = u_seq.len();
    let mut sens = Vec::with_capacity(n);
    let mut x = x0;
    let mut total = 0.0;
    for (k, &u) in u_seq.iter().enumerate() {
        if !cfg.contains(u) {
            return Err(Error::Step {
                step: k,
                source: Box::new(Error::Domain(format!("control {u} outside box"))),
            });
        }
        let s = cfg.step_sensitivity(x, u, w).map_err(|e| Error::Step {
            step: k,
            source: Box::new(e),
        })?;
        x = s.next;
        total -= x.x2;
        sens.push(s);
    }
    let mut grad = vec![0.0; n];
    let mut lambda = [0.0, -1.0, 0.0];
    for k in (0..n).rev() {
        let s = &sens[k];
        grad[k] = lambda[0] * s.du[0] + lambda[1] * s.du[1] + lambda[2] * s.du[2];
        let mut next = [0.0; 3];
        for (j, nj) in next.iter_mut().enumerate() {
            *nj = s.dx[0][j] * lambda[0] + s.dx[1][j] * lambda[1] + s.dx[2][j] * lambda[2];
        }
        if k >= 1 {
            next[1] -= 1.0;
        }
        lambda = next;
    }
    Ok((total, grad))
}

fn evaluate(problem: &OcpProblem, opts: &SolverOptions, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    match opts.gradient {
        GradientMode::Adjoint => cost_and_adjoint_gradient(u, problem.x0, &problem.w, &problem.model),
        GradientMode::FiniteDifference => {
            let f = problem.cost(u)?;
            let g = cost_gradient(
                u,
                problem.x0,
                &problem.w,
                &problem.model,
                opts.finite_difference_epsilon,
            )?;
            Ok((f, g))
        }
    }
}

fn projected_gradient_norm(u: &[f64], g: &[f64], cfg: &ModelConfig) -> f64 {
    u.iter()
        .zip(g)
        .map(|(&ui, &gi)| (cfg.project(ui - gi) - ui).abs())
        .fold(0.0, f64::max)
}

fn masked_dot(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|((x, y), _)| x * y)
        .sum()
}

/// Two-loop recursion restricted to the free variables.
fn quasi_newton_direction(
    g: &[f64],
    free: &[bool],
    pairs: &VecDeque<(Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    let mut q: Vec<f64> = g
        .iter()
        .zip(free)
        .map(|(&gi, &f)| if f { gi } else { 0.0 })
        .collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let sy = masked_dot(s, y, free);
        if sy <= 0.0 {
            alphas.push(None);
            continue;
        }
        let rho = 1.0 / sy;
        let a = rho * masked_dot(s, &q, free);
        for i in 0..q.len() {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
        alphas.push(Some((a, rho)));
    }
    let gamma = pairs
        .back()
        .map(|(s, y)| {
            let sy = masked_dot(s, y, free);
            let yy = masked_dot(y, y, free);
            if sy > 0.0 && yy > 0.0 {
                sy / yy
            } else {
                1.0
            }
        })
        .unwrap_or(1.0);
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for ((s, y), alpha) in pairs.iter().zip(alphas.into_iter().rev()) {
        if let Some((a, rho)) = alpha {
            let b = rho * masked_dot(y, &q, free);
            for i in 0..q.len() {
                if free[i] {
                    q[i] += s[i] * (a - b);
                }
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Runs the projected quasi-Newton iteration from one initial profile.
pub fn solve_from(problem: &OcpProblem, opts: &SolverOptions, start: &[f64]) -> Result<StartOutcome> {
    let cfg = &problem.model;
    let n = problem.horizon;
    if start.len() != n {
        return Err(Error::Solver(format!(
            "start profile has {} controls, horizon is {n}",
            start.len()
        )));
    }
    let mut u: Vec<f64> = start.iter().map(|&v| cfg.project(v)).collect();
    let (mut f, mut g) = evaluate(problem, opts, &u)?;
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(opts.memory);
    let mut converged = n == 0;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        if projected_gradient_norm(&u, &g, cfg) < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = u
            .iter()
            .zip(&g)
            .map(|(&ui, &gi)| !((ui <= cfg.u_min && gi > 0.0) || (ui >= cfg.u_max && gi < 0.0)))
            .collect();

        let mut accepted = None;
        for attempt in 0..2 {
            let steepest = attempt == 1 || pairs.is_empty();
            let d = if steepest {
                let gmax = g
                    .iter()
                    .zip(&free)
                    .filter(|(_, &fr)| fr)
                    .map(|(v, _)| v.abs())
                    .fold(0.0, f64::max);
                let scale = if gmax > 0.0 { cfg.box_width() / gmax } else { 0.0 };
                g.iter()
                    .zip(&free)
                    .map(|(&gi, &fr)| if fr { -scale * gi } else { 0.0 })
                    .collect::<Vec<_>>()
            } else {
                quasi_newton_direction(&g, &free, &pairs)
            };
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                if steepest {
                    break;
                }
                continue;
            }
            let mut t = 1.0;
            for _ in 0..50 {
                let trial: Vec<f64> = u
                    .iter()
                    .zip(&d)
                    .map(|(&ui, &di)| cfg.project(ui + t * di))
                    .collect();
                let decrease: f64 = trial.iter().zip(&u).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
                if decrease < 0.0 {
                    if let Ok(ft) = problem.cost(&trial) {
                        if ft <= f + 1e-4 * decrease {
                            accepted = Some(trial);
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() || steepest {
                break;
            }
        }

        let Some(u_new) = accepted else {
            // no descent available at working precision
            converged = true;
            break;
        };

        let (f_new, g_new) = evaluate(problem, opts, &u_new)?;
        let step: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sy: f64 = step.iter().zip(&dg).map(|(a, b)| a * b).sum();
        let ss: f64 = step.iter().map(|v| v * v).sum();
        let yy: f64 = dg.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((step, dg));
        }
        u = u_new;
        f = f_new;
        g = g_new;
        history.push(f);

        if step_norm < opts.step_tolerance {
            converged = true;
        }
        let w = opts.stall_window;
        if history.len() > w {
            let old = history[history.len() - 1 - w];
            if (old - f) <= opts.relative_improvement_tolerance * f.abs().max(1e-300) {
                converged = true;
            }
        }
    }

    if !converged && projected_gradient_norm(&u, &g, cfg) < opts.gradient_tolerance {
        converged = true;
    }

    Ok(StartOutcome {
        u,
        cost: f,
        converged,
        iterations,
        cost_history: history,
    })
}

/// Multistart solve. Returns the best converged candidate (lowest cost, then
/// lowest start index), or the best iterate with `converged = false`.
pub fn solve_ocp(problem: &OcpProblem, opts: &SolverOptions) -> Result<OcpSolution> {
    opts.validate()?;
    problem.model.validate()?;
    if !(problem.x0.x3 > crate::dynamics::MIN_TEMPERATURE) || !problem.x0.is_finite() {
        return Err(Error::Domain(format!("invalid initial state {:?}", problem.x0)));
    }
    let clock = Instant::now();
    let mut outcomes = Vec::with_capacity(opts.multistart.len());
    let mut failures = Vec::new();
    let mut iterations = 0;
    for (idx, profile) in opts.multistart.iter().enumerate() {
        let start = profile.materialize(problem.horizon, &problem.model);
        match solve_from(problem, opts, &start) {
            Ok(out) => {
                iterations += out.iterations;
                outcomes.push((idx, out));
            }
            Err(e) => failures.push(format!("start {idx}: {e}")),
        }
    }
    if outcomes.is_empty() {
        return Err(Error::Solver(format!("all starts failed: {}", failures.join("; "))));
    }
    let any_converged = outcomes.iter().any(|(_, o)| o.converged);
    let (start_index, best) = outcomes
        .into_iter()
        .filter(|(_, o)| o.converged || !any_converged)
        .min_by(|(ia, a), (ib, b)| a.cost.total_cmp(&b.cost).then(ia.cmp(ib)))
        .expect("non-empty");
    let trajectory = simulate(problem.x0, &best.u, &problem.w, &problem.model)?;
    let j_star = trajectory_cost(&trajectory);
    Ok(OcpSolution {
        u_star: best.u,
        j_star,
        trajectory,
        converged: any_converged,
        iterations,
        start_index,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}

/// Exhaustive search over all sequences drawn from `grid`. Ties go to the
/// lexicographically smallest index sequence.
pub fn brute_force_ocp(problem: &OcpProblem, grid: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = problem.horizon;
    let count = (grid.len() as f64).powi(n as i32);
    if grid.is_empty() || count > BRUTE_FORCE_BUDGET as f64 {
        return Err(Error::Budget {
            count,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let mut idx = vec![0usize; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let seq: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let c = problem.cost(&seq)?;
        if best.as_ref().map_or(true, |(_, b)| c < *b) {
            best = Some((seq, c));
        }
        // odometer increment, last position fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(best.expect("at least one sequence"));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(n: usize) -> OcpProblem {
        OcpProblem::new(
            StateVec::new(0.3, 0.05, 0.2),
            ParamVec::NOMINAL,
            n,
            ModelConfig::default(),
        )
    }

    #[test]
    fn zero_horizon_cost_is_zero() {
        assert_eq!(problem(0).cost(&[]).unwrap(), 0.0);
    }

    #[test]
    fn inert_product_gives_zero_cost() {
        let p = OcpProblem::new(
            StateVec::new(0.3, 0.0, 0.2),
            ParamVec::new(0.0, 400.0, 0.55),
            5,
            ModelConfig::default(),
        );
        assert_eq!(p.cost(&[0.1, 0.2, 0.3, 0.4, 0.449]).unwrap(), 0.0);
    }

    #[test]
    fn zero_rates_give_zero_gradient() {
        let cfg = ModelConfig::default();
        let w = ParamVec::new(0.0, 0.0, 0.55);
        let g = cost_gradient(&[0.1, 0.2, 0.3], StateVec::new(0.3, 0.1, 0.2), &w, &cfg, 1e-6).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
        let (_, ga) = cost_and_adjoint_gradient(&[0.1, 0.2, 0.3], StateVec::new(0.3, 0.1, 0.2), &w, &cfg).unwrap();
        assert!(ga.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn boundary_gradient_is_one_sided() {
        let p = problem(4);
        let cfg = &p.model;
        let u = vec![cfg.u_min, cfg.u_max, 0.2, 0.3];
        let g = cost_gradient(&u, p.x0, &p.w, cfg, 1e-6).unwrap();
        let h = 1e-6 * cfg.box_width();
        let mut up = u.clone();
        up[0] += h;
        let fwd = (p.cost(&up).unwrap() - p.cost(&u).unwrap()) / h;
        assert!((g[0] - fwd).abs() < 1e-6 * fwd.abs().max(1e-3));
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let p = problem(30);
        let u: Vec<f64> = (0..30).map(|k| 0.06 + 0.012 * k as f64).collect();
        let (f, ga) = cost_and_adjoint_gradient(&u, p.x0, &p.w, &p.model).unwrap();
        assert_eq!(f, p.cost(&u).unwrap());
        let gf = cost_gradient(&u, p.x0, &p.w, &p.model, 1e-6).unwrap();
        for (a, b) in ga.iter().zip(&gf) {
            assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn brute_force_single_step_picks_cheaper() {
        let p = problem(1);
        let (a, b) = (0.049, 0.449);
        let (seq, c) = brute_force_ocp(&p, &[a, b]).unwrap();
        let (ca, cb) = (p.cost(&[a]).unwrap(), p.cost(&[b]).unwrap());
        let expect = if cb < ca { (b, cb) } else { (a, ca) };
        assert_eq!(seq, vec![expect.0]);
        assert_eq!(c, expect.1);
    }

    #[test]
    fn brute_force_tie_break_is_lexicographic() {
        let p = OcpProblem::new(
            StateVec::new(0.3, 0.0, 0.2),
            ParamVec::new(0.0, 400.0, 0.55),
            3,
            ModelConfig::default(),
        );
        let (seq, c) = brute_force_ocp(&p, &[0.11, 0.049, 0.449]).unwrap();
        assert_eq!(seq, vec![0.11; 3]);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn brute_force_budget() {
        let err = brute_force_ocp(&problem(13), &[0.049, 0.11, 0.449]).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn constant_objective_is_solved_at_zero() {
        let p = OcpProblem::new(
            StateVec::new(0.3, 0.0, 0.2),
            ParamVec::new(0.0, 400.0, 0.55),
            6,
            ModelConfig::default(),
        );
        let sol = solve_ocp(&p, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.j_star, 0.0);
    }

    #[test]
    fn solution_is_feasible_and_consistent() {
        let p = problem(40);
        let sol = solve_ocp(&p, &SolverOptions::default()).unwrap();
        assert!(sol.u_star.iter().all(|&u| p.model.contains(u)));
        assert_eq!(sol.trajectory.len(), 41);
        assert!((sol.j_star - p.cost(&sol.u_star).unwrap()).abs() < 1e-9);
        for profile in &SolverOptions::default().multistart {
            let start = profile.materialize(40, &p.model);
            assert!(sol.j_star <= p.cost(&start).unwrap());
        }
    }

    #[test]
    fn single_start_history_is_monotone() {
        let p = problem(40);
        let opts = SolverOptions::default();
        let start = StartProfile::Random(7).materialize(40, &p.model);
        let out = solve_from(&p, &opts, &start).unwrap();
        assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_options() {
        let opts = SolverOptions {
            gradient_tolerance: 0.0,
            ..SolverOptions::default()
        };
        assert!(solve_ocp(&problem(3), &opts).is_err());
    }
}
