//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use mpc_distill::cli::{cmd_evaluate, cmd_generate, cmd_train, EvaluateArgs, RunConfig};
use mpc_distill::cloop::{run_closed_loop, EvalReport, Policy};
use mpc_distill::datagen::{
    bellman_pair, draw_scenarios, replay_outputs, sample_initial_state, sample_params, scenario_rng, Dataset,
    ScenarioSpec,
};
use mpc_distill::dynamics::{rk4_step, ModelConfig, ParamVec, StateVec};
use mpc_distill::io::{self, read_dataset, read_json, TimingsDoc};
use mpc_distill::learner::{label_to_control, quantize_label, LabelScheme};
use mpc_distill::ocp::{brute_force_ocp, solve_ocp, OcpProblem, SolverOptions};
use tempfile::TempDir;

const CANDIDACY_TOLERANCE: f64 = 1e-6;
const REPLAY_TOLERANCE: f64 = 1e-9;
const BELLMAN_MIN_AGREEMENT: f64 = 0.8;
const RECOVERED_ADVANTAGE_FLOOR: f64 = 0.3;
const ECONOMY_RATIO: f64 = 20.0;
const REPLICATES: u64 = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rk4_order() -> Outcome {
    let t0 = Instant::now();
    let w = ParamVec::new(0.0, 0.0, 0.55);
    let (x0, u, t) = ([0.4, 0.15, 0.2], 0.3, 2.0);
    let e = (-t as f64).exp();
    let exact = [1.0 + (x0[0] - 1.0) * e, x0[1] * e, u + (x0[2] - u) * e];
    let err = |n: usize| {
        let mut x = StateVec::from_array(x0);
        for _ in 0..n {
            x = rk4_step(x, u, &w, t / n as f64).unwrap();
        }
        let x = x.to_array();
        (0..3).map(|i| (x[i] - exact[i]).abs()).fold(0.0, f64::max)
    };
    let ratio = err(10) / err(20);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        (12.0..=20.0).contains(&ratio) && secs < 1.0,
        format!("error ratio {ratio:.3} in [12, 20], {secs:.4} s"),
    )
}

fn solver_vs_oracle() -> Outcome {
    let t0 = Instant::now();
    let cfg = ModelConfig::default();
    let spec = ScenarioSpec::default();
    let grid = [0.049, 0.11, 0.449];
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20 {
        let mut rng = scenario_rng(2024, i);
        let x0 = sample_initial_state(&mut rng, &spec);
        let w = sample_params(&mut rng, &spec, &cfg.w_nominal);
        let problem = OcpProblem::new(x0, w, 3, cfg.clone());
        let (_, brute) = brute_force_ocp(&problem, &grid).unwrap();
        let sol = solve_ocp(&problem, &SolverOptions::default()).unwrap();
        worst = worst.max(sol.j_star - brute);
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 30.0,
        format!("max(J_solver - J_grid) = {worst:.3e} over 20 instances, {secs:.2} s"),
    )
}

fn replay_identity() -> Outcome {
    let cfg = ModelConfig::default();
    let spec = ScenarioSpec { seed: 77, ..ScenarioSpec::default() };
    let mut worst: f64 = 0.0;
    for sc in draw_scenarios(&spec, &cfg.w_nominal, 10) {
        let sol = solve_ocp(&OcpProblem::new(sc.x0, sc.w, 120, cfg.clone()), &SolverOptions::default()).unwrap();
        let run = run_closed_loop(sc.x0, &sc.w, &Policy::OpenLoop(sol.u_star.clone()), 120, 10, &cfg).unwrap();
        worst = worst.max((run.cost - sol.j_star).abs());
    }
    outcome(
        worst <= REPLAY_TOLERANCE,
        format!("max |J_replay - J*| = {worst:.3e} over 10 scenarios"),
    )
}

fn candidacy(reports: &[EvalReport]) -> Outcome {
    let mut runs = 0;
    let (mut confirmed, mut unconfirmed) = (0, 0);
    for r in reports {
        runs += r.rows.iter().filter(|row| row.completed()).count() * r.policies.len();
        for v in &r.candidacy {
            assert!(v.j_cl < v.j_ideal - CANDIDACY_TOLERANCE);
            if v.confirmed {
                confirmed += 1;
                println!(
                    "  ideal-solver suboptimality: scenario {} policy {} J_cl {} < J* {}",
                    v.scenario, v.policy, v.j_cl, v.j_ideal
                );
            } else {
                unconfirmed += 1;
            }
        }
    }
    outcome(
        unconfirmed == 0,
        format!("{runs} closed-loop runs, {confirmed} confirmed and {unconfirmed} unconfirmed violations"),
    )
}

fn labels() -> Outcome {
    let mut ok = true;
    for level in 1..=3u8 {
        let u = label_to_control(level).unwrap();
        ok &= quantize_label(u).unwrap().value() == level;
    }
    ok &= quantize_label(0.075).unwrap().value() == 1;
    ok &= quantize_label(0.14).unwrap().value() == 2;
    ok &= LabelScheme::default().control_levels == [0.049, 0.11, 0.449];
    outcome(ok, "levels round-trip, 0.075 -> 1, 0.14 -> 2".into())
}

fn bookkeeping(dataset: &Dataset) -> Outcome {
    let layout = dataset.snapshot.layout;
    let model = &dataset.snapshot.model;
    let count_ok = dataset.len() == dataset.successes() * layout.m;
    let mut mismatches = 0;
    for rec in dataset.scenarios.iter().filter(|r| r.solved) {
        let y = replay_outputs(rec, model).unwrap();
        for s in dataset.samples.iter().filter(|s| s.q_index == rec.index) {
            let exact = s.u_value == rec.u_star[s.k]
                && s.window.values().iter().enumerate().all(|(j, v)| *v == y[s.k - j]);
            mismatches += usize::from(!exact);
        }
    }
    outcome(
        count_ok && mismatches == 0,
        format!(
            "{} samples = {} successes x m = {}, {mismatches} windows differ from re-simulation",
            dataset.len(),
            dataset.successes(),
            layout.m
        ),
    )
}

fn small_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output_dir = out.to_path_buf();
    cfg.generation.horizon = 60;
    cfg.generation.window = 5;
    cfg.generation.m_variants = vec![5, 20];
    cfg.generation.n_scenarios = 6;
    cfg.evaluation.n_scenarios = 4;
    cfg.learner.forest.n_trees = 20;
    cfg.override_seed(5);
    cfg
}

fn run_pipeline(cfg: &RunConfig) -> EvalReport {
    cmd_generate(cfg).unwrap();
    cmd_train(cfg, None, None, true).unwrap();
    cmd_evaluate(cfg, &EvaluateArgs::default()).unwrap()
}

fn determinism(reports: &mut Vec<EvalReport>) -> Outcome {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    reports.push(run_pipeline(&small_config(a.path())));
    reports.push(run_pipeline(&small_config(b.path())));
    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "timings.json")
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.path().join(n)).ok() != fs::read(b.path().join(n)).ok())
        .collect();
    outcome(
        differing.is_empty() && names.len() >= 10,
        format!("{} output files compared, differing: {differing:?}", names.len()),
    )
}

fn bellman() -> Outcome {
    let cfg = ModelConfig::default();
    let scheme = LabelScheme::default();
    let spec = ScenarioSpec { seed: 31, ..ScenarioSpec::default() };
    let (horizon, window, count) = (250, 10, 20);
    let mut agree = 0;
    for sc in draw_scenarios(&spec, &cfg.w_nominal, count) {
        let problem = OcpProblem::new(sc.x0, sc.w, horizon, cfg.clone());
        let opts = SolverOptions::default();
        let sol = solve_ocp(&problem, &opts).unwrap();
        let (u_m, u_re) = bellman_pair(&problem, &sol, window, &opts).unwrap();
        agree += usize::from(scheme.quantize(u_m).unwrap() == scheme.quantize(u_re).unwrap());
    }
    let share = agree as f64 / count as f64;
    outcome(
        share >= BELLMAN_MIN_AGREEMENT,
        format!("{agree}/{count} re-solves from x*_M agree on the label class at N = {horizon}"),
    )
}

struct Replicate {
    dataset: Dataset,
    timings: TimingsDoc,
    report: EvalReport,
}

fn desk_replicate(seed: u64, dir: &Path) -> Replicate {
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.generation.n_scenarios = 50;
    cfg.generation.horizon = 120;
    cfg.generation.window = 10;
    cfg.generation.m_variants = vec![10, 100];
    cfg.generation.sigma = [0.33; 3];
    cfg.evaluation.n_scenarios = 30;
    cfg.override_seed(seed);
    let report = run_pipeline(&cfg);
    Replicate {
        dataset: read_dataset(dir, "dataset").unwrap(),
        timings: read_json(&dir.join("timings.json"), io::TIMINGS_FORMAT).unwrap(),
        report,
    }
}

fn desk_experiment(reps: &[Replicate]) -> Outcome {
    let mut gap_votes = 0;
    let mut trend_votes = 0;
    let mut floor_ok = true;
    let mut lines = Vec::new();
    for (seed, rep) in reps.iter().enumerate() {
        let r = &rep.report;
        let a = &r.aggregates;
        let nominal = a.mean_policies[r.policy_index("nominal").unwrap()];
        let ra = |name: &str| a.recovered_advantage[r.policy_index(name).unwrap()];
        let (ra10, ra100) = (ra("model_m10"), ra("model_m100"));
        gap_votes += usize::from(a.mean_ideal < nominal);
        trend_votes += usize::from(matches!((ra10, ra100), (Some(x), Some(y)) if y > x));
        floor_ok &= ra100.is_some_and(|v| v > RECOVERED_ADVANTAGE_FLOOR);
        lines.push(format!(
            "seed {seed}: J_ideal {:.4}, J_nominal {nominal:.4}, RA(m=10) {}, RA(m=100) {}",
            a.mean_ideal,
            ra10.map_or("undefined".into(), |v| format!("{v:.3}")),
            ra100.map_or("undefined".into(), |v| format!("{v:.3}")),
        ));
    }
    let majority = reps.len() / 2 + 1;
    for l in &lines {
        println!("  {l}");
    }
    outcome(
        gap_votes >= majority && trend_votes >= majority && floor_ok,
        format!(
            "(a) ideal < nominal in {gap_votes}/{n}, (b) RA(100) > RA(10) in {trend_votes}/{n}, (c) RA(100) > 0.3 in every replicate: {floor_ok}",
            n = reps.len()
        ),
    )
}

fn data_economy(reps: &[Replicate]) -> Outcome {
    let mut worst = f64::INFINITY;
    for rep in reps {
        let median = rep.timings.median_solve_seconds.unwrap();
        let extrapolated = median * rep.dataset.len() as f64;
        worst = worst.min(extrapolated / rep.timings.timings.extraction_seconds.max(f64::MIN_POSITIVE));
    }
    outcome(
        worst >= ECONOMY_RATIO,
        format!("independent-solve time / extraction time >= {worst:.3e} across replicates"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("{} criterion {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report(1, "rk4 order", rk4_order());
    report(2, "solver vs grid oracle", solver_vs_oracle());
    report(3, "replay identity", replay_identity());
    report(5, "label scheme", labels());

    let mut eval_reports = Vec::new();
    report(7, "determinism", determinism(&mut eval_reports));
    report(8, "bellman spot-check", bellman());

    let dirs: Vec<TempDir> = (0..REPLICATES).map(|_| TempDir::new().unwrap()).collect();
    let reps: Vec<Replicate> = dirs
        .iter()
        .enumerate()
        .map(|(seed, d)| desk_replicate(seed as u64, d.path()))
        .collect();
    eval_reports.extend(reps.iter().map(|r| r.report.clone()));
    report(6, "dataset bookkeeping", bookkeeping(&reps[0].dataset));
    report(9, "desk-scale experiment", desk_experiment(&reps));
    report(10, "data economy", data_economy(&reps));
    report(4, "candidacy bound", candidacy(&eval_reports));

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
