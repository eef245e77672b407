//! Integrator and right-hand side checked against independent references.

use mpc_distill::dynamics::{reactor_rhs, rk4_step, simulate, ModelConfig, ParamVec, StateVec};

fn rhs_by_hand(x: [f64; 3], u: f64, w: [f64; 3]) -> [f64; 3] {
    let r1 = w[0] * x[0] * x[0] * (-1.0 / x[2]).exp();
    let r2 = w[1] * x[0] * (-w[2] / x[2]).exp();
    [1.0 - r1 - r2 - x[0], r1 - x[1], u - x[2]]
}

fn euler(x: [f64; 3], u: f64, w: [f64; 3], dt: f64, n: usize) -> [f64; 3] {
    let h = dt / n as f64;
    let mut x = x;
    for _ in 0..n {
        let f = rhs_by_hand(x, u, w);
        for i in 0..3 {
            x[i] += h * f[i];
        }
    }
    x
}

const POINTS: [([f64; 3], f64); 4] = [
    ([0.3, 0.1, 0.12], 0.049),
    ([0.5, 0.0, 0.2], 0.449),
    ([0.05, 0.15, 0.08], 0.11),
    ([0.2, 0.05, 0.15], 0.3),
];

#[test]
fn rhs_matches_transcription() {
    let w = ParamVec::NOMINAL;
    for (x, u) in POINTS {
        let got = reactor_rhs(StateVec::from_array(x), u, &w).unwrap().to_array();
        let want = rhs_by_hand(x, u, w.to_array());
        for i in 0..3 {
            assert!((got[i] - want[i]).abs() <= 1e-14 * want[i].abs().max(1.0), "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn model_step_matches_fine_euler() {
    let cfg = ModelConfig::default();
    let w = ParamVec::NOMINAL;
    for (x, u) in POINTS {
        let got = cfg.step(StateVec::from_array(x), u, &w).unwrap().to_array();
        // Richardson-extrapolated Euler is second order
        let e1 = euler(x, u, w.to_array(), cfg.dt, 10_000);
        let e2 = euler(x, u, w.to_array(), cfg.dt, 20_000);
        for i in 0..3 {
            let oracle = 2.0 * e2[i] - e1[i];
            assert!((got[i] - oracle).abs() < 1e-7, "state {i}: {} vs {oracle}", got[i]);
        }
    }
}

#[test]
fn rk4_global_order_on_linear_reduction() {
    let w = ParamVec::new(0.0, 0.0, 0.55);
    let (x0, u, t) = ([0.2, 0.1, 0.3], 0.25, 1.0);
    let exact = [
        1.0 + (x0[0] - 1.0) * (-t as f64).exp(),
        x0[1] * (-t as f64).exp(),
        u + (x0[2] - u) * (-t as f64).exp(),
    ];
    let err = |n: usize| {
        let mut x = StateVec::from_array(x0);
        for _ in 0..n {
            x = rk4_step(x, u, &w, t / n as f64).unwrap();
        }
        let x = x.to_array();
        (0..3).map(|i| (x[i] - exact[i]).abs()).fold(0.0, f64::max)
    };
    let ratio = err(5) / err(10);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zoh_refinement_converges() {
    let w = ParamVec::NOMINAL;
    let u: Vec<f64> = (0..50).map(|k| if k % 7 < 3 { 0.449 } else { 0.049 }).collect();
    let x0 = StateVec::new(0.3, 0.05, 0.1);
    let run = |substeps| {
        let cfg = ModelConfig {
            substeps,
            ..ModelConfig::default()
        };
        simulate(x0, &u, &w, &cfg).unwrap()
    };
    let (a, b, c) = (run(16), run(32), run(64));
    let diff = |p: &[StateVec], q: &[StateVec]| {
        p.iter()
            .zip(q)
            .flat_map(|(s, t)| (0..3).map(move |i| (s.to_array()[i] - t.to_array()[i]).abs()))
            .fold(0.0, f64::max)
    };
    let (d1, d2) = (diff(&a, &b), diff(&b, &c));
    assert!(d1 < 1e-3, "{d1}");
    assert!(d2 < d1 / 8.0, "{d1} {d2}");
}
