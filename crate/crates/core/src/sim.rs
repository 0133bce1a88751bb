//! Closed-loop simulation: fixed-step RK4 on the full multibody plant, the
//! reference scenarios, the Lyapunov monitor and the CSV log.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    lyapunov_rate, lyapunov_value, momentum_error_terms_at, orientation_error, postural_task, theorem1_terms_momentum,
    Allocation, ControlError, ControlMode, ControlOutput, Controller, ControllerGains, ControllerState, MomentumTerms,
    ReferenceSample,
};
use crate::dynamics::{e3, Configuration, DynamicsError, DynamicsWorkspace};
use crate::model::{initial_joint_configuration, RobotModel};
use crate::qp::{AllocationProblem, QpError};
use crate::spatial::{quat_derivative, Rotation, UnitQuaternion, Vec3};

/// Largest tolerated state norm before a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Records kept when a run diverges.
pub const DIVERGENCE_TAIL: usize = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("state diverged at t = {t:.4} s: {reason}")]
    Diverged {
        t: f64,
        reason: String,
        tail: Vec<LogRecord>,
    },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Closed-form task references.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceKind {
    /// Constant CoM position and optional orientation.
    Hold { position: Vec3, orientation: Option<Rotation> },
    /// Hold the CoM and base orientation found in the initial state.
    HoldInitial,
    /// `r(0) = 0`, `ṙ = before` until `switch_time`, then `ṙ = after`.
    PiecewiseVelocity { switch_time: f64, before: Vec3, after: Vec3 },
    /// `r = A(t)(cos ωt, sin ωt, 0) + climb·t e₃`, `A` ramping linearly to
    /// `radius` at `ramp_time`. `heading` rotates the initial base orientation
    /// about the vertical to give `R_d`.
    Helix {
        radius: f64,
        ramp_time: f64,
        angular_rate: f64,
        climb: f64,
        heading: f64,
    },
}

impl ReferenceKind {
    /// Reference at time `t` inside the integration step starting at
    /// `step_start`. Piecewise definitions pick their piece from
    /// `step_start`, so switches land exactly on step boundaries.
    pub fn sample(&self, t: f64, step_start: f64) -> ReferenceSample {
        match self {
            ReferenceKind::Hold { position, orientation } => ReferenceSample::hold(*position, *orientation),
            ReferenceKind::HoldInitial => ReferenceSample::hold(Vec3::zeros(), None),
            ReferenceKind::PiecewiseVelocity {
                switch_time,
                before,
                after,
            } => {
                let mut s = ReferenceSample::hold(Vec3::zeros(), None);
                if step_start < switch_time - 1e-9 {
                    s.position = before * t;
                    s.velocity = *before;
                } else {
                    s.position = before * *switch_time + after * (t - switch_time);
                    s.velocity = *after;
                }
                s
            }
            ReferenceKind::Helix {
                radius,
                ramp_time,
                angular_rate: w,
                climb,
                ..
            } => {
                let (amp, amp_rate) = if step_start < ramp_time - 1e-9 {
                    let k = radius / ramp_time;
                    (k * t, k)
                } else {
                    (*radius, 0.0)
                };
                let (sn, cs) = (w * t).sin_cos();
                let mut s = ReferenceSample::hold(Vec3::zeros(), None);
                s.position = Vec3::new(amp * cs, amp * sn, climb * t);
                s.velocity = Vec3::new(amp_rate * cs - amp * w * sn, amp_rate * sn + amp * w * cs, *climb);
                s.acceleration = Vec3::new(
                    -2.0 * amp_rate * w * sn - amp * w * w * cs,
                    2.0 * amp_rate * w * cs - amp * w * w * sn,
                    0.0,
                );
                s.jerk = Vec3::new(
                    -3.0 * amp_rate * w * w * cs + amp * w.powi(3) * sn,
                    -3.0 * amp_rate * w * w * sn - amp * w.powi(3) * cs,
                    0.0,
                );
                s
            }
        }
    }

    /// Replaces initial-state-dependent parts once the initial state is known.
    fn resolve(&self, com0: Vec3, rotation0: Rotation) -> ReferenceKind {
        match self {
            ReferenceKind::HoldInitial => ReferenceKind::Hold {
                position: com0,
                orientation: Some(rotation0),
            },
            other => other.clone(),
        }
    }

    fn orientation(&self, rotation0: &Rotation) -> Option<Rotation> {
        match self {
            ReferenceKind::Hold { orientation, .. } => *orientation,
            ReferenceKind::Helix { heading, .. } => Some(Rotation::about_z(*heading).compose(rotation0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub reference: ReferenceKind,
    pub duration: f64,
    pub mode: ControlMode,
    /// Controller model mass/inertia factor; 1.0 is the exact model.
    pub model_scale: f64,
}

/// Vertical climb at 1 m/s for 10 s, then horizontal flight at 1 m/s.
pub fn scenario_sim1() -> Scenario {
    Scenario {
        name: "sim1".into(),
        reference: ReferenceKind::PiecewiseVelocity {
            switch_time: 10.0,
            before: Vec3::new(0.0, 0.0, 1.0),
            after: Vec3::new(1.0, 0.0, 0.0),
        },
        duration: 20.0,
        mode: ControlMode::Position,
        model_scale: 1.0,
    }
}

/// Helical climb with a 60° heading change and a mismatched controller model.
pub fn scenario_sim2(perturb: f64) -> Scenario {
    Scenario {
        name: "sim2".into(),
        reference: ReferenceKind::Helix {
            radius: 2.0,
            ramp_time: 10.0,
            angular_rate: 0.3 * std::f64::consts::PI,
            climb: 1.0,
            heading: 60f64.to_radians(),
        },
        duration: 30.0,
        mode: ControlMode::PositionOrientation,
        model_scale: perturb,
    }
}

/// Station keeping at the initial CoM and orientation.
pub fn scenario_hover() -> Scenario {
    Scenario {
        name: "hover".into(),
        reference: ReferenceKind::HoldInitial,
        duration: 10.0,
        mode: ControlMode::PositionOrientation,
        model_scale: 1.0,
    }
}

pub fn scenario_by_name(name: &str, perturb: f64) -> Result<Scenario, SimError> {
    let mut s = match name {
        "sim1" => scenario_sim1(),
        "sim2" => scenario_sim2(perturb),
        "hover" => scenario_hover(),
        _ => return Err(SimError::UnknownScenario(name.to_string())),
    };
    s.model_scale = perturb;
    Ok(s)
}

/// Full closed-loop state `χ` plus controller states and time.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub base_position: Vec3,
    /// Scalar-first unit quaternion of the base orientation.
    pub orientation: Vector4<f64>,
    pub joints: DVector<f64>,
    /// `ν = (ȯ_B, ω_B, ṡ)`.
    pub velocity: DVector<f64>,
    pub controller: ControllerState,
}

struct Layout {
    n: usize,
}

impl Layout {
    const POS: usize = 0;
    const QUAT: usize = 3;
    const S: usize = 7;
    fn nu(&self) -> usize {
        7 + self.n
    }
    fn thrust(&self) -> usize {
        13 + 2 * self.n
    }
    fn integral(&self) -> usize {
        17 + 2 * self.n
    }
    fn torque_integral(&self) -> usize {
        23 + 2 * self.n
    }
    fn len(&self) -> usize {
        23 + 3 * self.n
    }
}

impl SimState {
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn rotation(&self) -> Rotation {
        UnitQuaternion::normalize(&self.orientation)
            .map(|q| q.to_rotation())
            .unwrap_or_else(|_| Rotation::identity())
    }

    pub fn configuration(&self) -> Configuration {
        Configuration {
            base_position: self.base_position,
            base_rotation: self.rotation(),
            joints: self.joints.clone(),
        }
    }

    pub fn joint_rates(&self) -> DVector<f64> {
        self.velocity.rows(6, self.n_joints()).into_owned()
    }

    fn to_flat(&self) -> DVector<f64> {
        let l = Layout { n: self.n_joints() };
        let mut x = DVector::zeros(l.len());
        x.fixed_rows_mut::<3>(Layout::POS).copy_from(&self.base_position);
        x.fixed_rows_mut::<4>(Layout::QUAT).copy_from(&self.orientation);
        x.rows_mut(Layout::S, l.n).copy_from(&self.joints);
        x.rows_mut(l.nu(), l.n + 6).copy_from(&self.velocity);
        x.fixed_rows_mut::<4>(l.thrust()).copy_from(&self.controller.thrust);
        x.fixed_rows_mut::<6>(l.integral()).copy_from(&self.controller.integral);
        x.rows_mut(l.torque_integral(), l.n).copy_from(&self.controller.torque_integral);
        x
    }

    fn from_flat(t: f64, x: &DVector<f64>, n: usize) -> SimState {
        let l = Layout { n };
        SimState {
            t,
            base_position: x.fixed_rows::<3>(Layout::POS).into_owned(),
            orientation: x.fixed_rows::<4>(Layout::QUAT).into_owned(),
            joints: x.rows(Layout::S, n).into_owned(),
            velocity: x.rows(l.nu(), n + 6).into_owned(),
            controller: ControllerState {
                thrust: x.fixed_rows::<4>(l.thrust()).into_owned(),
                integral: x.fixed_rows::<6>(l.integral()).into_owned(),
                torque_integral: x.rows(l.torque_integral(), n).into_owned(),
            },
        }
    }

    fn check_finite(&self) -> Result<(), String> {
        let x = self.to_flat();
        if x.iter().any(|v| !v.is_finite()) {
            return Err("non-finite state".into());
        }
        let norm = x.norm();
        if norm > DIVERGENCE_LIMIT {
            return Err(format!("state norm {norm:.3e} exceeds {DIVERGENCE_LIMIT:.0e}"));
        }
        Ok(())
    }
}

/// Thrust shares balancing gravity with the engines as currently oriented.
pub fn hover_thrust(ws: &DynamicsWorkspace) -> Vector4<f64> {
    let vertical: f64 = ws.kinematics.thrusters.iter().map(|t| t.direction.z).sum();
    Vector4::repeat(ws.mass * ws.gravity / vertical)
}

/// Initial state: base at the origin with identity orientation, shoulders
/// open, at rest, thrust balancing gravity.
pub fn initial_state(model: &RobotModel) -> SimState {
    let q = Configuration {
        base_position: Vec3::zeros(),
        base_rotation: Rotation::identity(),
        joints: initial_joint_configuration(model),
    };
    let nu = DVector::zeros(model.nv());
    let ws = DynamicsWorkspace::compute(model, &q, &nu);
    SimState {
        t: 0.0,
        base_position: q.base_position,
        orientation: *UnitQuaternion::identity().coords(),
        joints: q.joints,
        velocity: nu,
        controller: ControllerState::new(hover_thrust(&ws), model.dof()),
    }
}

/// One RK4 step of `ẋ = f(t, x)`.
pub fn rk4<F>(t: f64, x: &DVector<f64>, dt: f64, mut f: F) -> Result<DVector<f64>, SimError>
where
    F: FnMut(usize, f64, &DVector<f64>) -> Result<DVector<f64>, SimError>,
{
    let k1 = f(0, t, x)?;
    let k2 = f(1, t + 0.5 * dt, &(x + &k1 * (0.5 * dt)))?;
    let k3 = f(2, t + 0.5 * dt, &(x + &k2 * (0.5 * dt)))?;
    let k4 = f(3, t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Inputs applied to the plant during one derivative evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StageInputs {
    pub tau: DVector<f64>,
    /// Commanded `Ṫ` before saturation gating.
    pub thrust_rate: Vector4<f64>,
    /// Joint velocity reference of the torque loop.
    pub u2: DVector<f64>,
    pub integral_rate: Vector6<f64>,
}

impl StageInputs {
    /// Constant torques and thrust, no controller dynamics.
    pub fn open_loop(tau: DVector<f64>) -> Self {
        let n = tau.len();
        StageInputs {
            tau,
            thrust_rate: Vector4::zeros(),
            u2: DVector::zeros(n),
            integral_rate: Vector6::zeros(),
        }
    }
}

/// Thrust rate with engines held inside `[0, thrust_max]`.
fn gated_thrust_rate(thrust: &Vector4<f64>, rate: &Vector4<f64>, thrust_max: f64) -> Vector4<f64> {
    Vector4::from_fn(|i, _| {
        if (thrust[i] >= thrust_max && rate[i] > 0.0) || (thrust[i] <= 0.0 && rate[i] < 0.0) {
            0.0
        } else {
            rate[i]
        }
    })
}

/// `χ̇` of the plant under the given inputs.
fn plant_rates(
    ws: &DynamicsWorkspace,
    state: &SimState,
    inputs: &StageInputs,
    thrust_max: f64,
) -> Result<DVector<f64>, SimError> {
    let n = state.n_joints();
    let l = Layout { n };
    let thrust = &state.controller.thrust;
    let mut rhs = ws.thrust_generalized_force(thrust) - &ws.bias;
    let mut joint_rows = rhs.rows_mut(6, n);
    joint_rows += &inputs.tau;
    let nu_dot = ws
        .mass_matrix
        .clone()
        .cholesky()
        .ok_or(DynamicsError::MassMatrixNotPd)?
        .solve(&rhs);
    let nu = &state.velocity;
    let omega = nu.fixed_rows::<3>(3).into_owned();
    let mut dx = DVector::zeros(l.len());
    dx.fixed_rows_mut::<3>(Layout::POS).copy_from(&nu.fixed_rows::<3>(0));
    dx.fixed_rows_mut::<4>(Layout::QUAT)
        .copy_from(&quat_derivative(&state.orientation, &omega));
    dx.rows_mut(Layout::S, n).copy_from(&nu.rows(6, n));
    dx.rows_mut(l.nu(), n + 6).copy_from(&nu_dot);
    dx.fixed_rows_mut::<4>(l.thrust())
        .copy_from(&gated_thrust_rate(thrust, &inputs.thrust_rate, thrust_max));
    dx.fixed_rows_mut::<6>(l.integral()).copy_from(&inputs.integral_rate);
    dx.rows_mut(l.torque_integral(), n).copy_from(&(&inputs.u2 - nu.rows(6, n)));
    Ok(dx)
}

fn finish_step(model: &RobotModel, t: f64, x: &DVector<f64>, thrust_max: f64) -> SimState {
    let mut s = SimState::from_flat(t, x, model.dof());
    if let Ok(q) = UnitQuaternion::normalize(&s.orientation) {
        s.orientation = *q.coords();
    }
    s.controller.thrust = s.controller.thrust.map(|v| v.clamp(0.0, thrust_max));
    s
}

/// One RK4 step of the plant with inputs supplied per stage by `inputs`.
pub fn step_with<F>(model: &RobotModel, state: &SimState, dt: f64, thrust_max: f64, mut inputs: F) -> Result<SimState, SimError>
where
    F: FnMut(usize, f64, &SimState, &DynamicsWorkspace) -> Result<StageInputs, SimError>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidStep(dt));
    }
    let n = model.dof();
    let x = state.to_flat();
    let x1 = rk4(state.t, &x, dt, |stage, t, xs| {
        let s = SimState::from_flat(t, xs, n);
        let ws = DynamicsWorkspace::compute(model, &s.configuration(), &s.velocity);
        let u = inputs(stage, t, &s, &ws)?;
        plant_rates(&ws, &s, &u, thrust_max)
    })?;
    Ok(finish_step(model, state.t + dt, &x1, thrust_max))
}

/// Open-loop step with constant joint torques and thrust.
pub fn step_open_loop(model: &RobotModel, state: &SimState, tau: &DVector<f64>, dt: f64) -> Result<SimState, SimError> {
    step_with(model, state, dt, f64::INFINITY, |_, _, _, _| Ok(StageInputs::open_loop(tau.clone())))
}

/// One row of the CSV log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    /// `c − r`.
    pub com_error: Vec3,
    /// `|h^ω − h_d^ω|` of the plant.
    pub angular_momentum_error: f64,
    pub orientation_error: Vec3,
    /// `|u₂* − ṡ|`.
    pub joint_velocity_error: f64,
    pub thrust: Vector4<f64>,
    pub u1: Vector4<f64>,
    pub tau: DVector<f64>,
    pub lyapunov: f64,
    pub lyapunov_rate: f64,
    /// `|δ + A u₁* + B u₂*|`.
    pub qp_residual: f64,
    pub qp_iterations: usize,
}

/// CSV header with units.
pub fn csv_header(n: usize) -> String {
    let mut cols: Vec<String> = vec![
        "t [s]".into(),
        "com_err_x [m]".into(),
        "com_err_y [m]".into(),
        "com_err_z [m]".into(),
        "ang_mom_err_norm [kg*m^2/s]".into(),
        "ori_err_x [-]".into(),
        "ori_err_y [-]".into(),
        "ori_err_z [-]".into(),
        "joint_vel_err_norm [rad/s]".into(),
    ];
    cols.extend((1..=4).map(|i| format!("T{i} [N]")));
    cols.extend((1..=4).map(|i| format!("u1_{i} [N/s]")));
    cols.extend((1..=n).map(|i| format!("tau_{i} [N*m]")));
    cols.push("V [-]".into());
    cols.push("Vdot [1/s]".into());
    cols.push("qp_residual [-]".into());
    cols.push("qp_iterations [-]".into());
    cols.join(",")
}

impl LogRecord {
    pub fn csv_row(&self) -> String {
        let mut f: Vec<f64> = vec![self.t];
        f.extend(self.com_error.iter());
        f.push(self.angular_momentum_error);
        f.extend(self.orientation_error.iter());
        f.push(self.joint_velocity_error);
        f.extend(self.thrust.iter());
        f.extend(self.u1.iter());
        f.extend(self.tau.iter());
        f.push(self.lyapunov);
        f.push(self.lyapunov_rate);
        f.push(self.qp_residual);
        let mut row: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        row.push(self.qp_iterations.to_string());
        row.join(",")
    }
}

pub fn write_csv<W: Write>(mut w: W, n: usize, records: &[LogRecord]) -> std::io::Result<()> {
    writeln!(w, "{}", csv_header(n))?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()
}

/// When the controller is re-evaluated inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlUpdate {
    /// Once per step, held over all RK stages.
    #[default]
    ZeroOrderHold,
    /// At every RK stage, making the step an RK4 step of the closed loop.
    EveryStage,
}

/// A running closed-loop simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub model: RobotModel,
    pub controller: Controller,
    pub reference: ReferenceKind,
    pub dt: f64,
    pub update: ControlUpdate,
    /// Keep a text dump of the allocation QP every this many steps.
    pub dump_qp_every: Option<usize>,
    pub qp_dumps: Vec<(f64, String)>,
    state: SimState,
    orientation_ref: Option<Rotation>,
    steps: usize,
}

impl Simulation {
    pub fn new(model: RobotModel, scenario: &Scenario, gains: ControllerGains, dt: f64) -> Result<Self, SimError> {
        let state = initial_state(&model);
        Simulation::with_state(model, scenario, gains, dt, state)
    }

    pub fn with_state(
        model: RobotModel,
        scenario: &Scenario,
        gains: ControllerGains,
        dt: f64,
        state: SimState,
    ) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidStep(dt));
        }
        let q = state.configuration();
        let com0 = crate::dynamics::center_of_mass(&model, &q);
        let reference = scenario.reference.resolve(com0, q.base_rotation);
        let orientation_ref = reference.orientation(&q.base_rotation);
        Ok(Simulation {
            controller: Controller::new(gains, scenario.mode, scenario.model_scale),
            model,
            reference,
            dt,
            update: ControlUpdate::ZeroOrderHold,
            dump_qp_every: None,
            qp_dumps: Vec::new(),
            state,
            orientation_ref,
            steps: 0,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn reference_at(&self, t: f64, step_start: f64) -> ReferenceSample {
        let mut r = self.reference.sample(t, step_start);
        r.orientation = self.orientation_ref;
        r
    }

    fn control_at(
        controller: &mut Controller,
        ws: &DynamicsWorkspace,
        s: &SimState,
        reference: &ReferenceSample,
    ) -> Result<ControlOutput, SimError> {
        Ok(controller.compute(ws, &s.rotation(), &s.joints, &s.velocity, &s.controller, reference)?)
    }

    /// `İ = h̃` as seen by the controller.
    fn integral_rate(controller: &Controller, ws: &DynamicsWorkspace, nu: &DVector<f64>, r: &ReferenceSample) -> Vector6<f64> {
        let view = controller.view(ws);
        view.momentum(nu) - r.momentum(view.mass).h_d
    }

    /// Advances one step and returns the record of the state at its start.
    pub fn step(&mut self) -> Result<LogRecord, SimError> {
        let t0 = self.state.t;
        let dt = self.dt;
        let q = self.state.configuration();
        let ws = DynamicsWorkspace::compute(&self.model, &q, &self.state.velocity);
        let reference = self.reference_at(t0, t0);
        let out = Simulation::control_at(&mut self.controller, &ws, &self.state, &reference)?;
        let record = self.record(&ws, &out, &reference);
        if let Some(every) = self.dump_qp_every {
            if every > 0 && self.steps.is_multiple_of(every) {
                self.qp_dumps.push((t0, out.problem.to_standard()?.dump()));
            }
        }
        let thrust_max = self.controller.gains.thrust_max;
        let held = StageInputs {
            tau: out.tau.clone(),
            thrust_rate: out.u1,
            u2: out.u2.clone(),
            integral_rate: Vector6::zeros(),
        };
        let update = self.update;
        let orientation_ref = self.orientation_ref;
        let reference_kind = &self.reference;
        let controller = &mut self.controller;
        let next = step_with(&self.model, &self.state, dt, thrust_max, |stage, t, s, ws| {
            let mut r = reference_kind.sample(t, t0);
            r.orientation = orientation_ref;
            let mut inputs = if update == ControlUpdate::EveryStage && stage > 0 {
                let o = Simulation::control_at(controller, ws, s, &r)?;
                StageInputs {
                    tau: o.tau,
                    thrust_rate: o.u1,
                    u2: o.u2,
                    integral_rate: Vector6::zeros(),
                }
            } else {
                held.clone()
            };
            inputs.integral_rate = Simulation::integral_rate(controller, ws, &s.velocity, &r);
            Ok(inputs)
        })?;
        self.steps += 1;
        // keep the clock on the step grid
        let t1 = self.steps as f64 * dt;
        self.state = SimState { t: t1, ..next };
        if let Err(reason) = self.state.check_finite() {
            return Err(SimError::Diverged {
                t: t1,
                reason,
                tail: vec![record],
            });
        }
        Ok(record)
    }

    fn record(&self, ws: &DynamicsWorkspace, out: &ControlOutput, reference: &ReferenceSample) -> LogRecord {
        let s = &self.state;
        let h = ws.momentum(&s.velocity);
        let hd = reference.momentum(ws.mass).h_d;
        let s_dot = s.joint_rates();
        let gated = gated_thrust_rate(&s.controller.thrust, &out.u1, self.controller.gains.thrust_max);
        let residual = out.realized_residual(&gated, &s_dot);
        let orientation_error = match reference.orientation {
            Some(rd) => orientation_error(&s.rotation(), &rd),
            None => Vec3::zeros(),
        };
        LogRecord {
            t: s.t,
            com_error: ws.com - reference.position,
            angular_momentum_error: (h.fixed_rows::<3>(3) - hd.fixed_rows::<3>(3)).norm(),
            orientation_error,
            joint_velocity_error: (&out.u2 - s_dot).norm(),
            thrust: s.controller.thrust,
            u1: out.u1,
            tau: out.tau.clone(),
            lyapunov: lyapunov_value(&out.terms, &self.controller.gains),
            lyapunov_rate: lyapunov_rate(&out.terms, &self.controller.gains, &residual),
            qp_residual: out.allocation.condition_residual,
            qp_iterations: out.allocation.iterations,
        }
    }

    /// Runs until `duration`, collecting one record per step. On divergence
    /// the error carries the last [`DIVERGENCE_TAIL`] records.
    pub fn run(&mut self, duration: f64) -> Result<Vec<LogRecord>, SimError> {
        let steps = (duration / self.dt).round() as usize;
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            match self.step() {
                Ok(r) => records.push(r),
                Err(SimError::Diverged { t, reason, tail }) => {
                    records.extend(tail);
                    let start = records.len().saturating_sub(DIVERGENCE_TAIL);
                    return Err(SimError::Diverged {
                        t,
                        reason,
                        tail: records.split_off(start),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(records)
    }
}

/// Lyapunov data at one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub t: f64,
    pub v: f64,
    /// Analytic `V̇` including the condition residual.
    pub v_dot: f64,
    /// `V̇` with a zero residual, `−h̃ᵀK_D h̃ − ξ̃ᵀK_O ξ̃`.
    pub v_dot_ideal: f64,
    /// `(V_k − V_{k−1})/dt`, NaN on the first sample.
    pub v_dot_fd: f64,
    /// Analytic `V̇` averaged over the last step, the counterpart of `v_dot_fd`.
    pub v_dot_mid: f64,
    pub residual: f64,
}

/// Builds the sample for the current step from the momentum terms.
pub fn lyapunov_monitor(
    t: f64,
    terms: &MomentumTerms,
    gains: &ControllerGains,
    residual: &Vector6<f64>,
    previous: Option<&LyapunovSample>,
    dt: f64,
) -> LyapunovSample {
    let v = lyapunov_value(terms, gains);
    let v_dot = lyapunov_rate(terms, gains, residual);
    let (v_dot_fd, v_dot_mid) = match previous {
        Some(p) => ((v - p.v) / dt, 0.5 * (v_dot + p.v_dot)),
        None => (f64::NAN, f64::NAN),
    };
    LyapunovSample {
        t,
        v,
        v_dot,
        v_dot_ideal: lyapunov_rate(terms, gains, &Vector6::zeros()),
        v_dot_fd,
        v_dot_mid,
        residual: residual.norm(),
    }
}

/// Closed loop under the joint-velocity and thrust-rate inputs taken as
/// exact: `ṡ = u₂`, `Ṫ = u₁`. The state carries the momentum `h`
/// directly (`ḣ = A T − m g e₃`) and the stabilizing condition is enforced
/// exactly at every derivative evaluation.
#[derive(Debug, Clone)]
pub struct IdealSimulation {
    pub model: RobotModel,
    pub gains: ControllerGains,
    pub mode: ControlMode,
    pub reference: ReferenceKind,
    pub dt: f64,
    orientation_ref: Option<Rotation>,
    t: f64,
    x: DVector<f64>,
    steps: usize,
}

struct IdealEval {
    terms: MomentumTerms,
    u1: Vector4<f64>,
    u2: DVector<f64>,
    residual: Vector6<f64>,
}

impl IdealSimulation {
    /// Layout: `(o_B, Q, s, h, T, I)`.
    pub fn new(model: RobotModel, scenario: &Scenario, gains: ControllerGains, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidStep(dt));
        }
        let s0 = initial_state(&model);
        let n = model.dof();
        let mut x = DVector::zeros(23 + n);
        x.fixed_rows_mut::<3>(0).copy_from(&s0.base_position);
        x.fixed_rows_mut::<4>(3).copy_from(&s0.orientation);
        x.rows_mut(7, n).copy_from(&s0.joints);
        // starts at rest: h = 0
        x.fixed_rows_mut::<4>(13 + n).copy_from(&s0.controller.thrust);
        let q = s0.configuration();
        let com0 = crate::dynamics::center_of_mass(&model, &q);
        let reference = scenario.reference.resolve(com0, q.base_rotation);
        Ok(IdealSimulation {
            orientation_ref: reference.orientation(&q.base_rotation),
            reference,
            model,
            gains,
            mode: scenario.mode,
            dt,
            t: 0.0,
            x,
            steps: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    fn evaluate(&self, t: f64, step_start: f64, x: &DVector<f64>) -> Result<(IdealEval, DynamicsWorkspace, Rotation), SimError> {
        let n = self.model.dof();
        let rotation = UnitQuaternion::normalize(&x.fixed_rows::<4>(3).into_owned())
            .map_err(|_| SimError::Diverged {
                t,
                reason: "degenerate quaternion".into(),
                tail: Vec::new(),
            })?
            .to_rotation();
        let q = Configuration {
            base_position: x.fixed_rows::<3>(0).into_owned(),
            base_rotation: rotation,
            joints: x.rows(7, n).into_owned(),
        };
        let ws = DynamicsWorkspace::compute(&self.model, &q, &DVector::zeros(n + 6));
        let h = x.fixed_rows::<6>(7 + n).into_owned();
        let thrust = x.fixed_rows::<4>(13 + n).into_owned();
        let accumulated = x.fixed_rows::<6>(17 + n).into_owned();
        let mut reference = self.reference.sample(t, step_start);
        reference.orientation = self.orientation_ref;
        let integral = crate::control::integral_term(
            self.mode,
            &accumulated,
            ws.mass,
            &ws.com,
            &reference,
            &ws.locked_inertia,
            &rotation,
        );
        let mref = reference.momentum(ws.mass);
        let terms = momentum_error_terms_at(&ws, &h, &thrust, &integral, &mref, &self.gains);
        let th = theorem1_terms_momentum(&terms, &self.gains)?;
        let problem = AllocationProblem::assemble(
            th.delta,
            terms.a,
            th.b.clone(),
            postural_task(&q.joints, &self.gains),
            self.gains.weights,
            self.gains.bounds.clone(),
        )?;
        let sol = problem.solve_exact()?;
        let residual = th.delta + terms.a * sol.u1 + &th.b * &sol.u2;
        Ok((
            IdealEval {
                terms,
                u1: sol.u1,
                u2: sol.u2,
                residual,
            },
            ws,
            rotation,
        ))
    }

    fn rates(&self, t: f64, step_start: f64, x: &DVector<f64>) -> Result<DVector<f64>, SimError> {
        let n = self.model.dof();
        let (ev, ws, _) = self.evaluate(t, step_start, x)?;
        let jb_inv = ev
            .terms
            .cmm_base
            .try_inverse()
            .ok_or(ControlError::Singular("centroidal momentum matrix"))?;
        let v_b = jb_inv * (ev.terms.h - &ev.terms.cmm_joints * &ev.u2);
        let omega = v_b.fixed_rows::<3>(3).into_owned();
        let thrust = x.fixed_rows::<4>(13 + n).into_owned();
        let mut dx = DVector::zeros(x.len());
        dx.fixed_rows_mut::<3>(0).copy_from(&v_b.fixed_rows::<3>(0));
        dx.fixed_rows_mut::<4>(3)
            .copy_from(&quat_derivative(&x.fixed_rows::<4>(3).into_owned(), &omega));
        dx.rows_mut(7, n).copy_from(&ev.u2);
        let h_dot = ws.thrust_map * thrust - e3() * (ws.mass * ws.gravity);
        dx.fixed_rows_mut::<6>(7 + n).copy_from(&h_dot);
        dx.fixed_rows_mut::<4>(13 + n).copy_from(&ev.u1);
        dx.fixed_rows_mut::<6>(17 + n).copy_from(&ev.terms.h_tilde);
        Ok(dx)
    }

    /// Lyapunov sample at the current state.
    pub fn sample(&self, previous: Option<&LyapunovSample>) -> Result<LyapunovSample, SimError> {
        let (ev, _, _) = self.evaluate(self.t, self.t, &self.x)?;
        Ok(lyapunov_monitor(self.t, &ev.terms, &self.gains, &ev.residual, previous, self.dt))
    }

    /// Advances one step.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t0 = self.t;
        let x1 = rk4(t0, &self.x, self.dt, |_, t, xs| self.rates(t, t0, xs))?;
        let mut x1 = x1;
        let qn = UnitQuaternion::normalize(&x1.fixed_rows::<4>(3).into_owned()).map_err(|_| SimError::Diverged {
            t: t0,
            reason: "degenerate quaternion".into(),
            tail: Vec::new(),
        })?;
        x1.fixed_rows_mut::<4>(3).copy_from(qn.coords());
        self.steps += 1;
        self.t = self.steps as f64 * self.dt;
        self.x = x1;
        if self.x.iter().any(|v| !v.is_finite()) || self.x.norm() > DIVERGENCE_LIMIT {
            return Err(SimError::Diverged {
                t: self.t,
                reason: "ideal-plant state diverged".into(),
                tail: Vec::new(),
            });
        }
        Ok(())
    }

    /// Runs for `duration`, returning one Lyapunov sample per step start.
    /// Samples whose step straddles a reference discontinuity have their
    /// finite difference set to NaN.
    pub fn run(&mut self, duration: f64, discontinuities: &[f64]) -> Result<Vec<LyapunovSample>, SimError> {
        let steps = (duration / self.dt).round() as usize;
        let mut out: Vec<LyapunovSample> = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            let mut s = self.sample(out.last())?;
            let prev_t = self.t - self.dt;
            if discontinuities.iter().any(|&d| prev_t < d + 1e-9 && self.t > d - 1e-9) {
                s.v_dot_fd = f64::NAN;
                s.v_dot_mid = f64::NAN;
            }
            out.push(s);
            if out.len() <= steps {
                self.step()?;
            }
        }
        Ok(out)
    }

    /// Current CoM error `c − r(t)`.
    pub fn com_error(&self) -> Result<Vec3, SimError> {
        let (ev, _, _) = self.evaluate(self.t, self.t, &self.x)?;
        Ok(ev.terms.com - self.reference.sample(self.t, self.t).position)
    }

    /// Current commanded inputs `(u₁, u₂)`.
    pub fn inputs(&self) -> Result<(Vector4<f64>, DVector<f64>), SimError> {
        let (ev, _, _) = self.evaluate(self.t, self.t, &self.x)?;
        Ok((ev.u1, ev.u2))
    }
}

/// `(A B)` at a state, for rank checks.
pub fn condition_matrix(model: &RobotModel, state: &SimState, gains: &ControllerGains, reference: &ReferenceSample) -> DMatrix<f64> {
    let ws = DynamicsWorkspace::compute(model, &state.configuration(), &state.velocity);
    let mut c = Controller::new(gains.clone(), ControlMode::Position, 1.0);
    c.allocation = Allocation::Weighted;
    let out = c
        .compute(&ws, &state.rotation(), &state.joints, &state.velocity, &state.controller, reference)
        .expect("controller evaluation at a valid state");
    out.problem.condition_matrix()
}
