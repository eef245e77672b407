//! Learning-data generation from receding windows over solved open-loop problems.
//!
//! Each sampled pair `q = (x0, w)` is solved once over the horizon `N`. Along
//! the optimal trajectory, every instant `k = M .. M+m-1` yields one sample:
//! the window of the `M+1` most recent measurements `(y_k, ..., y_{k-M})`
//! paired with the optimal control `u*_k`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{measure, simulate, ModelConfig, ParamVec, StateVec};
use crate::error::{Error, Result};
use crate::learner::labels::{Label, LabelScheme};
use crate::ocp::{solve_ocp, OcpProblem, OcpSolution, SolverOptions};

/// Maximum fraction of failed scenario solves tolerated by [`build_dataset`].
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Sampling law for the `(x0, w)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Per-component `[lo, hi]` interval of the initial state.
    pub x0_box: [[f64; 2]; 3],
    /// Standard deviation of the relative parameter perturbation.
    pub sigma: [f64; 3],
    /// Perturbations with `|nu| > nu_bound` are redrawn.
    pub nu_bound: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            x0_box: [[1e-4, 0.5], [1e-4, 0.2], [1e-4, 0.25]],
            sigma: [0.33; 3],
            nu_bound: 0.8,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, [lo, hi]) in self.x0_box.iter().enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("generation.x0_box[{i}] = [{lo}, {hi}] is not ordered")));
            }
        }
        if !(self.x0_box[2][0] > crate::dynamics::MIN_TEMPERATURE) {
            return Err(Error::Config("generation.x0_box[2] must keep x3 > 1e-6".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("generation.sigma components must be > 0".into()));
        }
        if !(self.nu_bound > 0.0 && self.nu_bound < 1.0) {
            return Err(Error::Config(format!(
                "generation.nu_bound must lie in (0, 1), got {}",
                self.nu_bound
            )));
        }
        Ok(())
    }
}

/// Independent RNG stream for scenario `index`.
pub fn scenario_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Truncated-normal relative perturbation around the nominal vector.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R, spec: &ScenarioSpec, nominal: &ParamVec) -> ParamVec {
    let w0 = nominal.to_array();
    let mut w = [0.0; 3];
    for i in 0..3 {
        let normal = Normal::new(0.0, spec.sigma[i]).expect("sigma validated positive");
        let nu = loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= spec.nu_bound {
                break v;
            }
        };
        w[i] = (1.0 + nu) * w0[i];
    }
    ParamVec::from_array(w)
}

pub fn sample_initial_state<R: Rng + ?Sized>(rng: &mut R, spec: &ScenarioSpec) -> StateVec {
    let mut x = [0.0; 3];
    for (xi, [lo, hi]) in x.iter_mut().zip(spec.x0_box.iter()) {
        *xi = rng.gen_range(*lo..=*hi);
    }
    StateVec::from_array(x)
}

/// One `(x0, w)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub x0: StateVec,
    pub w: ParamVec,
}

/// Draws scenario `index`; the result depends only on `(spec.seed, index)`.
pub fn draw_scenario(spec: &ScenarioSpec, nominal: &ParamVec, index: usize) -> Scenario {
    let mut rng = scenario_rng(spec.seed, index as u64);
    let x0 = sample_initial_state(&mut rng, spec);
    let w = sample_params(&mut rng, spec, nominal);
    Scenario { index, x0, w }
}

pub fn draw_scenarios(spec: &ScenarioSpec, nominal: &ParamVec, count: usize) -> Vec<Scenario> {
    (0..count).map(|i| draw_scenario(spec, nominal, i)).collect()
}

/// The `M+1` most recent measurements, newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementWindow(Vec<f64>);

impl MeasurementWindow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("measurement window must not be empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("measurement window contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Window ending at `k` over `outputs`, i.e. `(y_k, ..., y_{k-M})`.
    pub fn ending_at(outputs: &[f64], k: usize, window: usize) -> Result<Self> {
        if k < window || k >= outputs.len() {
            return Err(Error::Config(format!(
                "window of length {} ending at {k} does not fit {} outputs",
                window + 1,
                outputs.len()
            )));
        }
        Self::new((0..=window).map(|j| outputs[k - j]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub window: MeasurementWindow,
    pub u_value: f64,
    pub label: Label,
    pub q_index: usize,
    /// Window end instant.
    pub k: usize,
}

/// Checks that windows ending at `M .. M+m-1` each have an optimal control.
pub fn check_window_layout(horizon: usize, window: usize, m: usize) -> Result<()> {
    if m == 0 || window + m > horizon {
        return Err(Error::Config(format!(
            "need m >= 1 and M + m - 1 <= N - 1 (M = {window}, m = {m}, N = {horizon})"
        )));
    }
    Ok(())
}

/// Receding windows over explicit output and control profiles.
pub fn extract_windows_from(
    outputs: &[f64],
    controls: &[f64],
    window: usize,
    m: usize,
) -> Result<Vec<(MeasurementWindow, f64)>> {
    check_window_layout(controls.len(), window, m)?;
    if outputs.len() < controls.len() {
        return Err(Error::Config(format!(
            "{} outputs cannot cover {} controls",
            outputs.len(),
            controls.len()
        )));
    }
    (window..window + m)
        .map(|k| Ok((MeasurementWindow::ending_at(outputs, k, window)?, controls[k])))
        .collect()
}

/// Receding windows along a solved problem's optimal trajectory.
pub fn extract_windows(solution: &OcpSolution, window: usize, m: usize) -> Result<Vec<(MeasurementWindow, f64)>> {
    let outputs: Vec<f64> = solution.trajectory.iter().map(measure).collect();
    extract_windows_from(&outputs, &solution.u_star, window, m)
}

/// Sizes of a generation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowLayout {
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Window memory `M`; windows hold `M + 1` values.
    pub window: usize,
    /// Windows harvested per solution.
    pub m: usize,
}

impl WindowLayout {
    pub fn validate(&self) -> Result<()> {
        check_window_layout(self.horizon, self.window, self.m)
    }

    pub fn features(&self) -> usize {
        self.window + 1
    }
}

/// Per-scenario record kept alongside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub index: usize,
    pub x0: StateVec,
    pub w: ParamVec,
    pub solved: bool,
    pub converged: bool,
    pub iterations: usize,
    pub j_star: Option<f64>,
    pub u_star: Vec<f64>,
    pub error: Option<String>,
}

/// Everything needed to reproduce a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSnapshot {
    pub layout: WindowLayout,
    pub n_scenarios: usize,
    pub scenario_spec: ScenarioSpec,
    /// Set when every scenario used the nominal parameters.
    pub nominal_only: bool,
    pub model: ModelConfig,
    pub solver: SolverOptions,
    pub labels: LabelScheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub snapshot: GenerationSnapshot,
    pub scenarios: Vec<ScenarioRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> usize {
        self.snapshot.layout.features()
    }

    pub fn successes(&self) -> usize {
        self.scenarios.iter().filter(|s| s.solved).count()
    }

    /// Keeps only windows with `k < M + m_variant`, as if generated with `m_variant`.
    pub fn with_m(&self, m_variant: usize) -> Result<Dataset> {
        let layout = self.snapshot.layout;
        if m_variant == 0 || m_variant > layout.m {
            return Err(Error::Config(format!(
                "m variant {m_variant} must lie in 1..={}",
                layout.m
            )));
        }
        let cutoff = layout.window + m_variant;
        let mut snapshot = self.snapshot.clone();
        snapshot.layout.m = m_variant;
        Ok(Dataset {
            samples: self.samples.iter().filter(|s| s.k < cutoff).cloned().collect(),
            snapshot,
            scenarios: self.scenarios.clone(),
        })
    }
}

/// Wall-clock diagnostics of a generation run. Kept apart from [`Dataset`]
/// because timings differ between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTimings {
    /// Solve time per scenario, `None` for failed solves.
    pub solve_seconds: Vec<Option<f64>>,
    /// Time spent slicing windows and labelling.
    pub extraction_seconds: f64,
    pub total_seconds: f64,
}

impl GenerationTimings {
    /// Median, first and third quartile of the successful solve times.
    pub fn quartiles(&self) -> Option<[f64; 3]> {
        let mut t: Vec<f64> = self.solve_seconds.iter().flatten().copied().collect();
        if t.is_empty() {
            return None;
        }
        t.sort_by(f64::total_cmp);
        Some([quantile(&t, 0.25), quantile(&t, 0.5), quantile(&t, 0.75)])
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Solves every scenario and harvests `m` labelled windows from each solution.
///
/// Failed solves are skipped; more than [`MAX_FAILURE_RATE`] failures abort.
pub fn build_dataset_from(
    scenarios: &[Scenario],
    layout: WindowLayout,
    spec: &ScenarioSpec,
    nominal_only: bool,
    model: &ModelConfig,
    solver: &SolverOptions,
    labels: &LabelScheme,
) -> Result<(Dataset, GenerationTimings)> {
    layout.validate()?;
    model.validate()?;
    solver.validate()?;
    labels.validate()?;
    if scenarios.is_empty() {
        return Err(Error::Config("no scenarios to generate from".into()));
    }
    let clock = Instant::now();
    let mut extraction = 0.0;
    let mut samples = Vec::with_capacity(scenarios.len() * layout.m);
    let mut records = Vec::with_capacity(scenarios.len());
    let mut solve_seconds = Vec::with_capacity(scenarios.len());

    for sc in scenarios {
        let problem = OcpProblem::new(sc.x0, sc.w, layout.horizon, model.clone());
        let solved = solve_ocp(&problem, solver).and_then(|sol| {
            let t = Instant::now();
            let windows = extract_windows(&sol, layout.window, layout.m)?;
            let mut batch = Vec::with_capacity(windows.len());
            for (offset, (window, u)) in windows.into_iter().enumerate() {
                batch.push(LabeledSample {
                    window,
                    u_value: u,
                    label: labels.quantize(u)?,
                    q_index: sc.index,
                    k: layout.window + offset,
                });
            }
            Ok((sol, batch, t.elapsed().as_secs_f64()))
        });
        match solved {
            Ok((sol, batch, dt)) => {
                extraction += dt;
                solve_seconds.push(Some(sol.wall_time));
                samples.extend(batch);
                records.push(ScenarioRecord {
                    index: sc.index,
                    x0: sc.x0,
                    w: sc.w,
                    solved: true,
                    converged: sol.converged,
                    iterations: sol.iterations,
                    j_star: Some(sol.j_star),
                    u_star: sol.u_star,
                    error: None,
                });
            }
            Err(e) => {
                solve_seconds.push(None);
                records.push(ScenarioRecord {
                    index: sc.index,
                    x0: sc.x0,
                    w: sc.w,
                    solved: false,
                    converged: false,
                    iterations: 0,
                    j_star: None,
                    u_star: Vec::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let failures = records.iter().filter(|r| !r.solved).count();
    if failures as f64 > MAX_FAILURE_RATE * scenarios.len() as f64 {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Generation(format!(
            "{failures} of {} scenario solves failed (first: {first})",
            scenarios.len()
        )));
    }

    let dataset = Dataset {
        samples,
        snapshot: GenerationSnapshot {
            layout,
            n_scenarios: scenarios.len(),
            scenario_spec: spec.clone(),
            nominal_only,
            model: model.clone(),
            solver: solver.clone(),
            labels: labels.clone(),
        },
        scenarios: records,
    };
    let timings = GenerationTimings {
        solve_seconds,
        extraction_seconds: extraction,
        total_seconds: clock.elapsed().as_secs_f64(),
    };
    Ok((dataset, timings))
}

/// Draws `n_scenarios` pairs from `spec` and builds the dataset.
pub fn build_dataset(
    spec: &ScenarioSpec,
    layout: WindowLayout,
    n_scenarios: usize,
    model: &ModelConfig,
    solver: &SolverOptions,
    labels: &LabelScheme,
) -> Result<(Dataset, GenerationTimings)> {
    spec.validate()?;
    let scenarios = draw_scenarios(spec, &model.w_nominal, n_scenarios);
    build_dataset_from(&scenarios, layout, spec, false, model, solver, labels)
}

/// Dataset whose scenarios all use the nominal parameters and the given initial states.
pub fn build_nominal_dataset(
    initial_states: &[StateVec],
    spec: &ScenarioSpec,
    layout: WindowLayout,
    model: &ModelConfig,
    solver: &SolverOptions,
    labels: &LabelScheme,
) -> Result<(Dataset, GenerationTimings)> {
    let scenarios: Vec<Scenario> = initial_states
        .iter()
        .enumerate()
        .map(|(index, &x0)| Scenario {
            index,
            x0,
            w: model.w_nominal,
        })
        .collect();
    build_dataset_from(&scenarios, layout, spec, true, model, solver, labels)
}

/// Re-simulates a scenario's stored optimal sequence and returns its output profile.
pub fn replay_outputs(record: &ScenarioRecord, model: &ModelConfig) -> Result<Vec<f64>> {
    let traj = simulate(record.x0, &record.u_star, &record.w, model)?;
    Ok(traj.iter().map(measure).collect())
}

/// Compares `u*_M` of a solved problem with the first control of a fresh solve
/// from `x*_M` over the same horizon and parameters.
pub fn bellman_pair(
    problem: &OcpProblem,
    solution: &OcpSolution,
    window: usize,
    solver: &SolverOptions,
) -> Result<(f64, f64)> {
    if window >= problem.horizon {
        return Err(Error::Config(format!(
            "window {window} must be below the horizon {}",
            problem.horizon
        )));
    }
    let shifted = OcpProblem::new(
        solution.trajectory[window],
        problem.w,
        problem.horizon,
        problem.model.clone(),
    );
    let resolved = solve_ocp(&shifted, solver)?;
    Ok((solution.u_star[window], resolved.u_star[0]))
}
