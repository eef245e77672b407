//! Closed-loop evaluation of output feedback policies against the
//! perfect-knowledge optimum and a nominal design.

use serde::{Deserialize, Serialize};

use crate::datagen::{
    build_nominal_dataset, scenario_rng, sample_initial_state, sample_params, Dataset, MeasurementWindow, Scenario,
    ScenarioSpec, WindowLayout,
};
use crate::dynamics::{measure, ModelConfig, ParamVec, StateVec};
use crate::error::{Error, Result};
use crate::learner::{train_forest, ForestConfig, ForestModel, LabelScheme};
use crate::ocp::{cost, solve_ocp, OcpProblem, OcpSolution, SolverOptions};

/// Tolerance of the `J_cl >= J*` candidacy check.
pub const CANDIDACY_TOLERANCE: f64 = 1e-6;

/// Stream offset separating evaluation draws from training draws.
const EVAL_STREAM_OFFSET: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Learned map from the measurement window to a control class.
    Forest { model: ForestModel, labels: LabelScheme },
    Constant(f64),
    /// Replays a fixed sequence regardless of measurements.
    OpenLoop(Vec<f64>),
    /// Replays each scenario's own ideal solution. Only meaningful inside
    /// [`evaluate`], which substitutes the solved sequence.
    IdealReplay,
}

impl Policy {
    fn check(&self, horizon: usize, window: usize, cfg: &ModelConfig) -> Result<()> {
        match self {
            Policy::Forest { model, labels } => {
                if model.n_features != window + 1 {
                    return Err(Error::Evaluation(format!(
                        "forest expects windows of {} values, evaluation uses M = {window}",
                        model.n_features
                    )));
                }
                if labels.control_levels.iter().any(|&u| !cfg.contains(u)) {
                    return Err(Error::Evaluation("label control levels leave the box".into()));
                }
            }
            Policy::Constant(u) => {
                if !cfg.contains(*u) {
                    return Err(Error::Evaluation(format!("constant control {u} outside the box")));
                }
            }
            Policy::OpenLoop(seq) => {
                if seq.len() < horizon {
                    return Err(Error::Evaluation(format!(
                        "open-loop sequence has {} controls, horizon is {horizon}",
                        seq.len()
                    )));
                }
                if seq.iter().any(|&u| !cfg.contains(u)) {
                    return Err(Error::Evaluation("open-loop sequence leaves the box".into()));
                }
            }
            Policy::IdealReplay => {
                return Err(Error::Evaluation("ideal replay needs the scenario's ideal solution".into()));
            }
        }
        Ok(())
    }

    /// Control at instant `k` given the current window.
    pub fn control(&self, k: usize, window: &MeasurementWindow) -> Result<f64> {
        match self {
            Policy::Forest { model, labels } => Ok(labels.control(model.predict(window)?)),
            Policy::Constant(u) => Ok(*u),
            Policy::OpenLoop(seq) => Ok(seq[k]),
            Policy::IdealReplay => Err(Error::Evaluation("ideal replay has no standalone control".into())),
        }
    }
}

/// Window at instant `k`; slots before instant 0 repeat `y_0`.
pub fn padded_window(outputs: &[f64], k: usize, window: usize) -> Result<MeasurementWindow> {
    MeasurementWindow::new((0..=window).map(|j| outputs[k.saturating_sub(j)]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub cost: f64,
    pub states: Vec<StateVec>,
    pub outputs: Vec<f64>,
    pub controls: Vec<f64>,
}

/// Simulates `horizon` steps of output feedback on the plant `w_true`.
/// The policy only sees measurement windows.
pub fn run_closed_loop(
    x0: StateVec,
    w_true: &ParamVec,
    policy: &Policy,
    horizon: usize,
    window: usize,
    cfg: &ModelConfig,
) -> Result<ClosedLoopRun> {
    policy.check(horizon, window, cfg)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut x = x0;
    let mut total = 0.0;
    states.push(x);
    outputs.push(measure(&x));
    for k in 0..horizon {
        let u = policy.control(k, &padded_window(&outputs, k, window)?)?;
        x = cfg.step(x, u, w_true).map_err(|e| Error::Step {
            step: k,
            source: Box::new(e),
        })?;
        total -= x.x2;
        controls.push(u);
        states.push(x);
        outputs.push(measure(&x));
    }
    Ok(ClosedLoopRun {
        cost: total,
        states,
        outputs,
        controls,
    })
}

/// Optimal open-loop cost with the parameters known.
pub fn ideal_cost(x0: StateVec, w: &ParamVec, horizon: usize, cfg: &ModelConfig, solver: &SolverOptions) -> Result<OcpSolution> {
    solve_ocp(&OcpProblem::new(x0, *w, horizon, cfg.clone()), solver)
}

/// Trains the baseline feedback on data generated with `w` fixed at nominal.
#[allow(clippy::too_many_arguments)]
pub fn train_nominal_policy(
    initial_states: &[StateVec],
    spec: &ScenarioSpec,
    layout: WindowLayout,
    model: &ModelConfig,
    solver: &SolverOptions,
    labels: &LabelScheme,
    forest: &ForestConfig,
) -> Result<(Policy, Dataset)> {
    let (dataset, _) = build_nominal_dataset(initial_states, spec, layout, model, solver, labels)?;
    let forest_model = train_forest(&dataset.samples, forest)?;
    Ok((
        Policy::Forest {
            model: forest_model,
            labels: labels.clone(),
        },
        dataset,
    ))
}

/// Share of the nominal-to-ideal gap closed by the learned feedback.
pub fn recovered_advantage(mean_learned: f64, mean_nominal: f64, mean_ideal: f64) -> Result<f64> {
    let gap = mean_nominal - mean_ideal;
    if !(gap > 0.0) {
        return Err(Error::Evaluation(format!(
            "recovered advantage undefined: nominal mean {mean_nominal} is not above ideal mean {mean_ideal}"
        )));
    }
    Ok((mean_nominal - mean_learned) / gap)
}

/// Fresh evaluation pairs drawn from the training distributions on a disjoint stream.
pub fn draw_eval_scenarios(spec: &ScenarioSpec, nominal: &ParamVec, seed: u64, count: usize) -> Vec<Scenario> {
    (0..count)
        .map(|index| {
            let mut rng = scenario_rng(seed, EVAL_STREAM_OFFSET + index as u64);
            let x0 = sample_initial_state(&mut rng, spec);
            let w = sample_params(&mut rng, spec, nominal);
            Scenario { index, x0, w }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub x0: StateVec,
    pub w: ParamVec,
    pub j_ideal: Option<f64>,
    /// Closed-loop cost per policy, in report policy order.
    pub j_policies: Vec<Option<f64>>,
    pub error: Option<String>,
}

impl EvalRow {
    pub fn completed(&self) -> bool {
        self.j_ideal.is_some() && self.j_policies.iter().all(Option::is_some)
    }
}

/// A closed-loop cost found below the ideal cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidacyViolation {
    pub scenario: usize,
    pub policy: String,
    pub j_cl: f64,
    pub j_ideal: f64,
    /// Cost of the closed-loop control sequence recomputed open loop.
    pub recomputed: f64,
    /// The recomputation agrees with `j_cl` and beats the ideal, i.e. the ideal
    /// solve stopped at a worse local minimum.
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub completed: usize,
    pub failed: usize,
    pub mean_ideal: f64,
    pub mean_policies: Vec<f64>,
    /// `(mean_nominal - mean_ideal) / |mean_nominal|`.
    pub nominal_gap: Option<f64>,
    /// Recovered advantage per policy, `None` where undefined.
    pub recovered_advantage: Vec<Option<f64>>,
    /// `mean_ideal <= mean_policy <= mean_nominal` per policy.
    pub ordering_holds: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policies: Vec<String>,
    pub nominal: Option<String>,
    pub horizon: usize,
    pub window: usize,
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
    pub candidacy: Vec<CandidacyViolation>,
}

impl EvalReport {
    pub fn policy_index(&self, name: &str) -> Option<usize> {
        self.policies.iter().position(|p| p == name)
    }

    pub fn unconfirmed_violations(&self) -> usize {
        self.candidacy.iter().filter(|c| !c.confirmed).count()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Recomputes aggregates from completed rows.
pub fn aggregate(rows: &[EvalRow], policies: &[String], nominal: Option<&str>) -> Aggregates {
    let done: Vec<&EvalRow> = rows.iter().filter(|r| r.completed()).collect();
    let mean_ideal = mean(done.iter().map(|r| r.j_ideal.unwrap()));
    let mean_policies: Vec<f64> = (0..policies.len())
        .map(|p| mean(done.iter().map(|r| r.j_policies[p].unwrap())))
        .collect();
    let nominal_mean = nominal
        .and_then(|n| policies.iter().position(|p| p == n))
        .map(|i| mean_policies[i]);
    let nominal_gap = nominal_mean.map(|mn| (mn - mean_ideal) / mn.abs());
    let recovered_advantage = mean_policies
        .iter()
        .map(|&mp| nominal_mean.and_then(|mn| recovered_advantage(mp, mn, mean_ideal).ok()))
        .collect();
    let ordering_holds = mean_policies
        .iter()
        .map(|&mp| mean_ideal <= mp && nominal_mean.map_or(true, |mn| mp <= mn))
        .collect();
    Aggregates {
        completed: done.len(),
        failed: rows.len() - done.len(),
        mean_ideal,
        mean_policies,
        nominal_gap,
        recovered_advantage,
        ordering_holds,
    }
}

/// Runs every policy on every scenario and solves each scenario's ideal problem.
pub fn evaluate(
    policies: &[NamedPolicy],
    nominal: Option<&str>,
    scenarios: &[Scenario],
    horizon: usize,
    window: usize,
    cfg: &ModelConfig,
    solver: &SolverOptions,
) -> Result<EvalReport> {
    if policies.is_empty() || scenarios.is_empty() {
        return Err(Error::Evaluation("need at least one policy and one scenario".into()));
    }
    let names: Vec<String> = policies.iter().map(|p| p.name.clone()).collect();
    if let Some(n) = nominal {
        if !names.iter().any(|p| p == n) {
            return Err(Error::Evaluation(format!("nominal policy '{n}' is not among the policies")));
        }
    }
    let mut rows = Vec::with_capacity(scenarios.len());
    let mut candidacy = Vec::new();
    for sc in scenarios {
        let mut errors = Vec::new();
        let solution = match ideal_cost(sc.x0, &sc.w, horizon, cfg, solver) {
            Ok(sol) => Some(sol),
            Err(e) => {
                errors.push(format!("ideal: {e}"));
                None
            }
        };
        let ideal = solution.as_ref().map(|s| s.j_star);
        let mut j_policies = Vec::with_capacity(policies.len());
        for np in policies {
            let outcome = match (&np.policy, &solution) {
                (Policy::IdealReplay, Some(sol)) => {
                    run_closed_loop(sc.x0, &sc.w, &Policy::OpenLoop(sol.u_star.clone()), horizon, window, cfg)
                }
                (policy, _) => run_closed_loop(sc.x0, &sc.w, policy, horizon, window, cfg),
            };
            match outcome {
                Ok(run) => {
                    if let Some(j_ideal) = ideal {
                        if run.cost < j_ideal - CANDIDACY_TOLERANCE {
                            let recomputed = cost(&run.controls, sc.x0, &sc.w, cfg).unwrap_or(f64::NAN);
                            let confirmed =
                                (recomputed - run.cost).abs() <= 1e-9 && recomputed < j_ideal - CANDIDACY_TOLERANCE;
                            candidacy.push(CandidacyViolation {
                                scenario: sc.index,
                                policy: np.name.clone(),
                                j_cl: run.cost,
                                j_ideal,
                                recomputed,
                                confirmed,
                            });
                        }
                    }
                    j_policies.push(Some(run.cost));
                }
                Err(e) => {
                    errors.push(format!("{}: {e}", np.name));
                    j_policies.push(None);
                }
            }
        }
        rows.push(EvalRow {
            index: sc.index,
            x0: sc.x0,
            w: sc.w,
            j_ideal: ideal,
            j_policies,
            error: if errors.is_empty() { None } else { Some(errors.join("; ")) },
        });
    }
    let aggregates = aggregate(&rows, &names, nominal);
    Ok(EvalReport {
        policies: names,
        nominal: nominal.map(str::to_owned),
        horizon,
        window,
        rows,
        aggregates,
        candidacy,
    })
}
