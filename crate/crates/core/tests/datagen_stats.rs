//! Sampling laws and dataset bookkeeping.

use mpc_distill::datagen::{
    build_dataset, draw_scenarios, replay_outputs, sample_initial_state, sample_params, scenario_rng, ScenarioSpec,
    WindowLayout,
};
use mpc_distill::dynamics::{ModelConfig, ParamVec};
use mpc_distill::learner::LabelScheme;
use mpc_distill::ocp::SolverOptions;

/// Standard deviation of N(0, sigma) conditioned on |nu| <= b, by Simpson quadrature.
fn truncated_std(sigma: f64, b: f64) -> f64 {
    let n = 20_000;
    let h = 2.0 * b / n as f64;
    let (mut mass, mut second) = (0.0, 0.0);
    for i in 0..=n {
        let v = -b + i as f64 * h;
        let wgt = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let p = (-0.5 * (v / sigma).powi(2)).exp();
        mass += wgt * p;
        second += wgt * p * v * v;
    }
    (second / mass).sqrt()
}

#[test]
fn parameter_ratios_follow_truncated_normal() {
    let spec = ScenarioSpec::default();
    let nominal = ParamVec::NOMINAL;
    let mut rng = scenario_rng(11, 0);
    let draws = 100_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..draws {
        let r = sample_params(&mut rng, &spec, &nominal).ratio_to(&nominal);
        for i in 0..3 {
            assert!((0.2..=1.8).contains(&r[i]));
            sum[i] += r[i];
            sq[i] += r[i] * r[i];
        }
    }
    let oracle = truncated_std(0.33, 0.8);
    assert!(oracle < 0.33);
    for i in 0..3 {
        let mean = sum[i] / draws as f64;
        let std = (sq[i] / draws as f64 - mean * mean).sqrt();
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((std / oracle - 1.0).abs() < 0.05, "std {std} vs {oracle}");
    }
}

#[test]
fn initial_states_cover_the_box_uniformly() {
    let spec = ScenarioSpec::default();
    let mut rng = scenario_rng(3, 7);
    let draws = 100_000;
    let mut sum = [0.0; 3];
    for _ in 0..draws {
        let x = sample_initial_state(&mut rng, &spec).to_array();
        for i in 0..3 {
            let [lo, hi] = spec.x0_box[i];
            assert!(x[i] >= lo && x[i] <= hi);
            sum[i] += x[i];
        }
    }
    for i in 0..3 {
        let [lo, hi] = spec.x0_box[i];
        let mid = 0.5 * (lo + hi);
        assert!((sum[i] / draws as f64 - mid).abs() < 0.01 * mid);
    }
}

#[test]
fn scenario_draws_depend_only_on_seed_and_index() {
    let spec = ScenarioSpec { seed: 5, ..ScenarioSpec::default() };
    let a = draw_scenarios(&spec, &ParamVec::NOMINAL, 8);
    let b = draw_scenarios(&spec, &ParamVec::NOMINAL, 3);
    assert_eq!(a[..3], b[..]);
    let other = draw_scenarios(&ScenarioSpec { seed: 6, ..spec }, &ParamVec::NOMINAL, 3);
    assert_ne!(a[..3], other[..]);
}

#[test]
fn windows_align_with_replayed_trajectories() {
    let model = ModelConfig::default();
    let layout = WindowLayout { horizon: 30, window: 5, m: 7 };
    let spec = ScenarioSpec { seed: 2, ..ScenarioSpec::default() };
    let (ds, timings) = build_dataset(&spec, layout, 3, &model, &SolverOptions::default(), &LabelScheme::default()).unwrap();
    assert_eq!(ds.len(), ds.successes() * layout.m);
    assert_eq!(timings.solve_seconds.len(), 3);
    for rec in ds.scenarios.iter().filter(|r| r.solved) {
        let y = replay_outputs(rec, &model).unwrap();
        for s in ds.samples.iter().filter(|s| s.q_index == rec.index) {
            assert_eq!(s.u_value, rec.u_star[s.k]);
            for (j, v) in s.window.values().iter().enumerate() {
                assert_eq!(*v, y[s.k - j]);
            }
        }
    }
    let (again, _) = build_dataset(&spec, layout, 3, &model, &SolverOptions::default(), &LabelScheme::default()).unwrap();
    assert_eq!(again, ds);
}
