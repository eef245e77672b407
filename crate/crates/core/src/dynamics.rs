//! Parallel reactor model and its fixed-step discretization.
//!
//! The continuous model is
//!
//! ```text
//! x1' = 1 - w1 x1^2 exp(-1/x3) - w2 x1 exp(-w3/x3) - x1
//! x2' = w1 x1^2 exp(-1/x3) - x2
//! x3' = u - x3
//! ```
//!
//! where `x1`, `x2` are reactant and product concentrations, `x3` the mixture
//! temperature and `u` the heat flow. Only `x2` is measured.
//!
//! The discrete map `x_{k+1} = f(x_k, u_k, w)` holds `u_k` constant over one
//! sampling period and integrates it with `substeps` classical RK4 steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperatures at or below this are rejected.
pub const MIN_TEMPERATURE: f64 = 1e-6;

/// A control profile over the prediction horizon.
pub type ControlSequence = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVec {
    /// Reactant concentration.
    pub x1: f64,
    /// Product concentration (the measured output).
    pub x2: f64,
    /// Mixture temperature.
    pub x3: f64,
}

impl StateVec {
    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    fn axpy(self, h: f64, d: StateVec) -> StateVec {
        StateVec::new(self.x1 + h * d.x1, self.x2 + h * d.x2, self.x3 + h * d.x3)
    }
}

/// Uncertain kinetic parameters `(w1, w2, w3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVec {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl ParamVec {
    /// Nominal parameter vector `(1e4, 400, 0.55)`.
    pub const NOMINAL: ParamVec = ParamVec::new(1e4, 400.0, 0.55);

    pub const fn new(w1: f64, w2: f64, w3: f64) -> Self {
        Self { w1, w2, w3 }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.w1, self.w2, self.w3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Componentwise ratio to a reference vector.
    pub fn ratio_to(&self, reference: &ParamVec) -> [f64; 3] {
        [
            self.w1 / reference.w1,
            self.w2 / reference.w2,
            self.w3 / reference.w3,
        ]
    }
}

impl Default for ParamVec {
    fn default() -> Self {
        Self::NOMINAL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Sampling period.
    pub dt: f64,
    /// RK4 sub-steps per sampling period.
    pub substeps: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub w_nominal: ParamVec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            substeps: 16,
            u_min: 0.049,
            u_max: 0.449,
            w_nominal: ParamVec::NOMINAL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("model.dt must be > 0, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("model.substeps must be >= 1".into()));
        }
        if !(self.u_min < self.u_max) {
            return Err(Error::Config(format!(
                "model.u_min ({}) must be < model.u_max ({})",
                self.u_min, self.u_max
            )));
        }
        let w = self.w_nominal;
        if !(w.w1 > 0.0 && w.w2 > 0.0 && w.w3 > 0.0) {
            return Err(Error::Config("model.w_nominal components must be > 0".into()));
        }
        Ok(())
    }

    pub fn box_width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.u_min + self.u_max)
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.u_min && u <= self.u_max
    }

    /// Projects a control onto the admissible box.
    pub fn project(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    /// One sampling period of the discrete-time system.
    pub fn step(&self, x: StateVec, u: f64, w: &ParamVec) -> Result<StateVec> {
        let h = self.dt / self.substeps as f64;
        let mut x = x;
        for _ in 0..self.substeps {
            x = rk4_step(x, u, w, h)?;
        }
        Ok(x)
    }
}

/// Time derivative of the reactor state.
pub fn reactor_rhs(x: StateVec, u: f64, w: &ParamVec) -> Result<StateVec> {
    if !(x.x3 > MIN_TEMPERATURE) {
        return Err(Error::Domain(format!(
            "x3 = {} must exceed {MIN_TEMPERATURE}",
            x.x3
        )));
    }
    let r1 = w.w1 * x.x1 * x.x1 * (-1.0 / x.x3).exp();
    let r2 = w.w2 * x.x1 * (-w.w3 / x.x3).exp();
    let d = StateVec::new(1.0 - r1 - r2 - x.x1, r1 - x.x2, u - x.x3);
    if !d.x1.is_finite() {
        return Err(Error::Domain(format!("non-finite dx1 at {x:?}")));
    }
    if !d.x2.is_finite() {
        return Err(Error::Domain(format!("non-finite dx2 at {x:?}")));
    }
    if !d.x3.is_finite() {
        return Err(Error::Domain(format!("non-finite dx3 at {x:?}")));
    }
    Ok(d)
}

/// Jacobian of [`reactor_rhs`] with respect to the state. The derivative with
/// respect to `u` is the constant `(0, 0, 1)`.
fn rhs_jacobian(x: StateVec, w: &ParamVec) -> [[f64; 3]; 3] {
    let a = (-1.0 / x.x3).exp();
    let b = (-w.w3 / x.x3).exp();
    let inv_t2 = 1.0 / (x.x3 * x.x3);
    let dr1_dx1 = 2.0 * w.w1 * x.x1 * a;
    let dr1_dx3 = w.w1 * x.x1 * x.x1 * a * inv_t2;
    let dr2_dx1 = w.w2 * b;
    let dr2_dx3 = w.w2 * x.x1 * b * w.w3 * inv_t2;
    [
        [-dr1_dx1 - dr2_dx1 - 1.0, 0.0, -dr1_dx3 - dr2_dx3],
        [dr1_dx1, -1.0, dr1_dx3],
        [0.0, 0.0, -1.0],
    ]
}

/// Classical fourth-order Runge–Kutta step with `u` held over `dt`.
pub fn rk4_step(x: StateVec, u: f64, w: &ParamVec, dt: f64) -> Result<StateVec> {
    let k1 = reactor_rhs(x, u, w)?;
    let k2 = reactor_rhs(x.axpy(0.5 * dt, k1), u, w)?;
    let k3 = reactor_rhs(x.axpy(0.5 * dt, k2), u, w)?;
    let k4 = reactor_rhs(x.axpy(dt, k3), u, w)?;
    let next = StateVec::new(
        x.x1 + dt / 6.0 * (k1.x1 + 2.0 * k2.x1 + 2.0 * k3.x1 + k4.x1),
        x.x2 + dt / 6.0 * (k1.x2 + 2.0 * k2.x2 + 2.0 * k3.x2 + k4.x2),
        x.x3 + dt / 6.0 * (k1.x3 + 2.0 * k2.x3 + 2.0 * k3.x3 + k4.x3),
    );
    if !next.is_finite() {
        return Err(Error::Domain(format!("non-finite RK4 result from {x:?}")));
    }
    Ok(next)
}

/// Sensitivity of one discrete step: `next = f(x, u)`, `dx = ∂f/∂x`, `du = ∂f/∂u`.
#[derive(Debug, Clone, Copy)]
pub struct StepSensitivity {
    pub next: StateVec,
    pub dx: [[f64; 3]; 3],
    pub du: [f64; 3],
}

/// Derivative of a state with respect to `(x_start, u)`, stored as 3 rows of 4.
type Jac34 = [[f64; 4]; 3];

fn mat_mul_34(a: &[[f64; 3]; 3], d: &Jac34) -> Jac34 {
    let mut out = [[0.0; 4]; 3];
    for i in 0..3 {
        for j in 0..4 {
            out[i][j] = a[i][0] * d[0][j] + a[i][1] * d[1][j] + a[i][2] * d[2][j];
        }
    }
    out
}

fn stage_derivative(x: StateVec, w: &ParamVec, dstage: &Jac34) -> Jac34 {
    let mut dk = mat_mul_34(&rhs_jacobian(x, w), dstage);
    dk[2][3] += 1.0;
    dk
}

fn combine(base: &Jac34, h: f64, dk: &Jac34) -> Jac34 {
    let mut out = *base;
    for i in 0..3 {
        for j in 0..4 {
            out[i][j] += h * dk[i][j];
        }
    }
    out
}

/// One RK4 sub-step together with its exact discrete derivative.
fn rk4_step_sensitivity(x: StateVec, u: f64, w: &ParamVec, dt: f64) -> Result<(StateVec, Jac34)> {
    let id: Jac34 = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ];
    let k1 = reactor_rhs(x, u, w)?;
    let dk1 = stage_derivative(x, w, &id);
    let s2 = x.axpy(0.5 * dt, k1);
    let k2 = reactor_rhs(s2, u, w)?;
    let dk2 = stage_derivative(s2, w, &combine(&id, 0.5 * dt, &dk1));
    let s3 = x.axpy(0.5 * dt, k2);
    let k3 = reactor_rhs(s3, u, w)?;
    let dk3 = stage_derivative(s3, w, &combine(&id, 0.5 * dt, &dk2));
    let s4 = x.axpy(dt, k3);
    let k4 = reactor_rhs(s4, u, w)?;
    let dk4 = stage_derivative(s4, w, &combine(&id, dt, &dk3));

    let next = StateVec::new(
        x.x1 + dt / 6.0 * (k1.x1 + 2.0 * k2.x1 + 2.0 * k3.x1 + k4.x1),
        x.x2 + dt / 6.0 * (k1.x2 + 2.0 * k2.x2 + 2.0 * k3.x2 + k4.x2),
        x.x3 + dt / 6.0 * (k1.x3 + 2.0 * k2.x3 + 2.0 * k3.x3 + k4.x3),
    );
    if !next.is_finite() {
        return Err(Error::Domain(format!("non-finite RK4 result from {x:?}")));
    }
    let mut d = id;
    for i in 0..3 {
        for j in 0..4 {
            d[i][j] += dt / 6.0 * (dk1[i][j] + 2.0 * dk2[i][j] + 2.0 * dk3[i][j] + dk4[i][j]);
        }
    }
    Ok((next, d))
}

impl ModelConfig {
    /// Same as [`ModelConfig::step`] but also returns the step Jacobians.
    pub fn step_sensitivity(&self, x: StateVec, u: f64, w: &ParamVec) -> Result<StepSensitivity> {
        let h = self.dt / self.substeps as f64;
        let mut state = x;
        let mut acc: Jac34 = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for _ in 0..self.substeps {
            let (next, local) = rk4_step_sensitivity(state, u, w, h)?;
            // chain rule: d(next)/dz = A d(state)/dz + [0 | b]
            let a = [
                [local[0][0], local[0][1], local[0][2]],
                [local[1][0], local[1][1], local[1][2]],
                [local[2][0], local[2][1], local[2][2]],
            ];
            let mut chained = mat_mul_34(&a, &acc);
            for (row, l) in chained.iter_mut().zip(local.iter()) {
                row[3] += l[3];
            }
            acc = chained;
            state = next;
        }
        Ok(StepSensitivity {
            next: state,
            dx: [
                [acc[0][0], acc[0][1], acc[0][2]],
                [acc[1][0], acc[1][1], acc[1][2]],
                [acc[2][0], acc[2][1], acc[2][2]],
            ],
            du: [acc[0][3], acc[1][3], acc[2][3]],
        })
    }
}

/// Simulates the discrete system; returns `u_seq.len() + 1` states starting at `x0`.
pub fn simulate(x0: StateVec, u_seq: &[f64], w: &ParamVec, cfg: &ModelConfig) -> Result<Vec<StateVec>> {
    let mut traj = Vec::with_capacity(u_seq.len() + 1);
    traj.push(x0);
    let mut x = x0;
    for (k, &u) in u_seq.iter().enumerate() {
        if !cfg.contains(u) {
            return Err(Error::Step {
                step: k,
                source: Box::new(Error::Domain(format!(
                    "control {u} outside [{}, {}]",
                    cfg.u_min, cfg.u_max
                ))),
            });
        }
        x = cfg.step(x, u, w).map_err(|e| Error::Step {
            step: k,
            source: Box::new(e),
        })?;
        traj.push(x);
    }
    Ok(traj)
}

/// Measurement map: the product concentration.
pub fn measure(x: &StateVec) -> f64 {
    x.x2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_rk4() -> ModelConfig {
        ModelConfig {
            substeps: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn rhs_reaction_free_state() {
        let d = reactor_rhs(StateVec::new(0.0, 0.0, 0.2), 0.2, &ParamVec::NOMINAL).unwrap();
        assert_eq!(d, StateVec::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn rhs_zero_rates_is_linear_decay() {
        let w = ParamVec::new(0.0, 0.0, 0.7);
        let x = StateVec::new(0.3, 0.12, 0.25);
        let d = reactor_rhs(x, 0.1, &w).unwrap();
        assert_eq!(d, StateVec::new(1.0 - 0.3, -0.12, 0.1 - 0.25));
    }

    #[test]
    fn rhs_rejects_nonpositive_temperature() {
        for t in [0.0, -0.1, 1e-7, f64::NAN] {
            let err = reactor_rhs(StateVec::new(0.1, 0.1, t), 0.1, &ParamVec::NOMINAL).unwrap_err();
            assert!(err.to_string().contains("x3"), "{err}");
        }
    }

    #[test]
    fn rk4_keeps_equilibrium_temperature() {
        let x = rk4_step(StateVec::new(0.0, 0.0, 0.2), 0.2, &ParamVec::NOMINAL, 0.02).unwrap();
        assert_eq!(x.x3, 0.2);
    }

    #[test]
    fn rk4_linear_reduction_matches_closed_form() {
        let w = ParamVec::new(0.0, 0.0, 0.55);
        let dt = 0.02;
        let x = rk4_step(StateVec::new(0.3, 0.0, 0.2), 0.2, &w, dt).unwrap();
        let exact = 1.0 - (1.0 - 0.3) * (-dt as f64).exp();
        assert!((x.x1 - exact).abs() < 1e-9);
    }

    #[test]
    fn simulate_empty_sequence() {
        let x0 = StateVec::new(0.1, 0.05, 0.2);
        let traj = simulate(x0, &[], &ParamVec::NOMINAL, &ModelConfig::default()).unwrap();
        assert_eq!(traj, vec![x0]);
    }

    #[test]
    fn simulate_unrolls_steps() {
        let cfg = single_rk4();
        let w = ParamVec::NOMINAL;
        let x0 = StateVec::new(0.2, 0.05, 0.15);
        let traj = simulate(x0, &[0.1, 0.3], &w, &cfg).unwrap();
        let x1 = rk4_step(x0, 0.1, &w, cfg.dt).unwrap();
        let x2 = rk4_step(x1, 0.3, &w, cfg.dt).unwrap();
        assert_eq!(traj, vec![x0, x1, x2]);
    }

    #[test]
    fn simulate_rejects_out_of_box_control() {
        let err = simulate(
            StateVec::new(0.2, 0.05, 0.15),
            &[0.1, 0.5],
            &ParamVec::NOMINAL,
            &ModelConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Step { step: 1, .. }));
    }

    #[test]
    fn measure_projects_product() {
        assert_eq!(measure(&StateVec::new(0.3, 0.12, 0.2)), 0.12);
        assert_eq!(measure(&StateVec::new(0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn step_sensitivity_matches_central_differences() {
        let cfg = ModelConfig::default();
        let w = ParamVec::new(1.3e4, 310.0, 0.48);
        let x = StateVec::new(0.25, 0.08, 0.3);
        let u = 0.2;
        let s = cfg.step_sensitivity(x, u, &w).unwrap();
        assert_eq!(s.next, cfg.step(x, u, &w).unwrap());
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x.to_array();
            let mut xm = x.to_array();
            xp[j] += h;
            xm[j] -= h;
            let fp = cfg.step(StateVec::from_array(xp), u, &w).unwrap().to_array();
            let fm = cfg.step(StateVec::from_array(xm), u, &w).unwrap().to_array();
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - s.dx[i][j]).abs() < 1e-6, "dx[{i}][{j}] {fd} vs {}", s.dx[i][j]);
            }
        }
        let fp = cfg.step(x, u + h, &w).unwrap().to_array();
        let fm = cfg.step(x, u - h, &w).unwrap().to_array();
        for i in 0..3 {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!((fd - s.du[i]).abs() < 1e-7);
        }
    }
}
