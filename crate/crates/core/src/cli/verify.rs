//! Oracle checks behind `momflight verify`.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix6x4, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::ControllerGains;
use crate::dynamics::{
    center_of_mass, forward_kinematics, frame_jacobian, inverse_dynamics, kinetic_energy, mass_matrix, momentum,
    potential_energy, Configuration, DynamicsWorkspace, Frame,
};
use crate::model::RobotModel;
use crate::qp::{ActiveSetSolver, AllocationProblem, Bounds, Weights};
use crate::sim::{initial_state, scenario_sim1, step_open_loop, IdealSimulation, SimState};
use crate::spatial::{vee_of_skew_part, Mat3, Rotation, UnitQuaternion, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: String,
}

impl CheckResult {
    fn measured(name: &str, residual: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            residual,
            tolerance,
            pass: residual.is_finite() && residual < tolerance,
            note: String::new(),
        }
    }

    pub fn failed(name: &str, note: String) -> Self {
        CheckResult {
            name: name.into(),
            residual: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
            note,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        if self.note.is_empty() {
            write!(
                f,
                "{status}  {:<22} residual {:.3e}  tolerance {:.0e}",
                self.name, self.residual, self.tolerance
            )
        } else {
            write!(f, "{status}  {:<22} {}", self.name, self.note)
        }
    }
}

fn random_configuration(model: &RobotModel, rng: &mut ChaCha8Rng) -> Configuration {
    Configuration {
        base_position: Vec3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
        base_rotation: Rotation::from_rpy(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.4..1.4),
            rng.gen_range(-3.0..3.0),
        ),
        joints: DVector::from_fn(model.dof(), |_, _| rng.gen_range(-1.5..1.5)),
    }
}

fn random_velocity(model: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(model.nv(), |_, _| rng.gen_range(-1.0..1.0))
}

fn state_at(model: &RobotModel, q: &Configuration, nu: &DVector<f64>, thrust: Vector4<f64>) -> SimState {
    let mut s = initial_state(model);
    s.base_position = q.base_position;
    s.orientation = *UnitQuaternion::from_rotation(&q.base_rotation).coords();
    s.joints = q.joints.clone();
    s.velocity = nu.clone();
    s.controller.thrust = thrust;
    s
}

fn five_point<T, F>(f: F, eps: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    (f(-2.0 * eps) - f(2.0 * eps) + (f(eps) - f(-eps)) * 8.0) * (1.0 / (12.0 * eps))
}

/// Angular velocity of link `link` along `q ⊕ ν t`, by differencing its rotation.
fn link_angular_velocity(model: &RobotModel, q: &Configuration, nu: &DVector<f64>, link: usize) -> Vec3 {
    let r = *forward_kinematics(model, q).link_poses[link].rotation.matrix();
    let r_dot: Mat3 = five_point(
        |t| *forward_kinematics(model, &q.integrate(nu, t)).link_poses[link].rotation.matrix(),
        1e-3,
    );
    vee_of_skew_part(&(r_dot * r.transpose()))
}

fn check_model(model: &RobotModel) -> CheckResult {
    match model.validate() {
        Ok(()) => CheckResult::measured("model invariants", 0.0, 1.0),
        Err(e) => CheckResult::failed("model invariants", e.to_string()),
    }
}

fn check_crba(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let nv = model.nv();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let q = random_configuration(model, rng);
        let nu = random_velocity(model, rng);
        let m = mass_matrix(model, &q);
        let bias = inverse_dynamics(model, &q, &nu, &DVector::zeros(nv));
        for i in 0..nv {
            let mut e = DVector::zeros(nv);
            e[i] = 1.0;
            let col = inverse_dynamics(model, &q, &nu, &e) - &bias;
            worst = worst.max((col - m.column(i)).amax());
        }
    }
    CheckResult::measured("CRBA vs RNEA", worst, 1e-9)
}

fn check_cmm(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let q = random_configuration(model, rng);
        let nu = random_velocity(model, rng);
        let kin = forward_kinematics(model, &q);
        let com = center_of_mass(model, &q);
        let mut linear = Vec3::zeros();
        let mut angular = Vec3::zeros();
        for (i, link) in model.links.iter().enumerate() {
            let m = link.inertial.mass;
            let v = five_point(|t| forward_kinematics(model, &q.integrate(&nu, t)).link_coms[i], 1e-3);
            let r = *kin.link_poses[i].rotation.matrix();
            let omega = link_angular_velocity(model, &q, &nu, i);
            linear += v * m;
            angular += (kin.link_coms[i] - com).cross(&(v * m)) + r * link.inertial.inertia * r.transpose() * omega;
        }
        let brute = Vector6::new(linear.x, linear.y, linear.z, angular.x, angular.y, angular.z);
        worst = worst.max((momentum(model, &q, &nu) - brute).amax());
    }
    CheckResult::measured("CMM vs link sum", worst, 1e-8)
}

fn check_jacobians(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let q = random_configuration(model, rng);
        let nu = random_velocity(model, rng);
        for (i, thruster) in forward_kinematics(model, &q).thrusters.iter().enumerate() {
            let v = five_point(|t| forward_kinematics(model, &q.integrate(&nu, t)).thrusters[i].position, 1e-3);
            let omega = link_angular_velocity(model, &q, &nu, thruster.link);
            let jv = frame_jacobian(model, &q, Frame::Thruster(i)) * &nu;
            let fd = DVector::from_vec(vec![v.x, v.y, v.z, omega.x, omega.y, omega.z]);
            worst = worst.max((jv - fd).amax());
        }
    }
    CheckResult::measured("frame Jacobians", worst, 1e-5)
}

fn check_newton_euler(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let q = random_configuration(model, rng);
        let nu = random_velocity(model, rng);
        let thrust = Vector4::from_fn(|_, _| rng.gen_range(0.0..100.0));
        let tau = DVector::from_fn(model.dof(), |_, _| rng.gen_range(-5.0..5.0));
        let s0 = state_at(model, &q, &nu, thrust);
        let steps = step_open_loop(model, &s0, &tau, eps)
            .and_then(|s1| step_open_loop(model, &s1, &tau, eps).map(|s2| (s1, s2)));
        let (s1, s2) = match steps {
            Ok(pair) => pair,
            Err(e) => return CheckResult::failed("Newton-Euler", e.to_string()),
        };
        let h = |s: &SimState| momentum(model, &s.configuration(), &s.velocity);
        let fd = (h(&s1) * 4.0 - h(&s0) * 3.0 - h(&s2)) / (2.0 * eps);
        let ws = DynamicsWorkspace::compute(model, &q, &nu);
        let mut expected = ws.thrust_map * thrust;
        expected[2] -= ws.mass * ws.gravity;
        worst = worst.max((fd - expected).norm() / expected.norm().max(1.0));
    }
    CheckResult::measured("Newton-Euler", worst, 1e-4)
}

fn check_energy(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let q = random_configuration(model, rng);
    let nu = random_velocity(model, rng);
    let mut s = state_at(model, &q, &nu, Vector4::zeros());
    let tau = DVector::zeros(model.dof());
    let energy = |s: &SimState| {
        let q = s.configuration();
        kinetic_energy(model, &q, &s.velocity) + potential_energy(model, &q)
    };
    let e0 = energy(&s);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        s = match step_open_loop(model, &s, &tau, 1e-3) {
            Ok(next) => next,
            Err(e) => return CheckResult::failed("free-fall energy", e.to_string()),
        };
        worst = worst.max((energy(&s) - e0).abs());
    }
    CheckResult::measured("free-fall energy", worst, 1e-6)
}

fn check_qp(model: &RobotModel, rng: &mut ChaCha8Rng) -> CheckResult {
    let n = model.dof();
    let mut worst = 0.0f64;
    let mut solver = ActiveSetSolver::new();
    for _ in 0..200 {
        let a = Matrix6x4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(6, n, |_, _| rng.gen_range(-1.0..1.0));
        let delta = Vector6::from_fn(|_, _| rng.gen_range(-20.0..20.0));
        let postural = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let weights = Weights {
            momentum: rng.gen_range(0.1..100.0),
            postural: rng.gen_range(0.1..10.0),
            joint_regularization: rng.gen_range(0.1..100.0),
            thrust_regularization: rng.gen_range(0.1..10.0),
        };
        let bounds = Bounds::symmetric(n, rng.gen_range(0.1..50.0), rng.gen_range(0.1..5.0));
        let solved = AllocationProblem::assemble(delta, a, b, postural, weights, bounds)
            .and_then(|p| p.solve(&mut solver));
        match solved {
            Ok(sol) if sol.converged => worst = worst.max(sol.kkt_residual),
            Ok(_) => return CheckResult::failed("QP KKT", "solver did not converge".into()),
            Err(e) => return CheckResult::failed("QP KKT", e.to_string()),
        }
    }
    CheckResult::measured("QP KKT", worst, 1e-8)
}

/// One second of the ideal Sim-1 loop: condition residual, sign of `V̇` and
/// finite-difference agreement.
fn check_lyapunov(model: &RobotModel, gains: &ControllerGains) -> Vec<CheckResult> {
    let n = model.dof();
    let gains = gains.clone().with_bounds(Bounds::symmetric(n, 1e9, 1e9));
    let run = IdealSimulation::new(model.clone(), &scenario_sim1(), gains, 1e-3).and_then(|mut sim| sim.run(1.0, &[]));
    let samples = match run {
        Ok(s) => s,
        Err(e) => return vec![CheckResult::failed("Lyapunov", e.to_string())],
    };
    let residual = samples.iter().map(|s| s.residual).fold(0.0, f64::max);
    let v_dot = samples.iter().map(|s| s.v_dot_ideal).fold(f64::NEG_INFINITY, f64::max);
    let fd = samples
        .iter()
        .filter(|s| !s.v_dot_fd.is_nan())
        .map(|s| (s.v_dot_fd - s.v_dot_mid).abs() / (1e-3 * s.v_dot_mid.abs()).max(1e-6))
        .fold(0.0, f64::max);
    let mut sign = CheckResult::measured("Lyapunov max Vdot", v_dot, 0.0);
    sign.pass = v_dot <= 0.0;
    vec![
        CheckResult::measured("Lyapunov residual", residual, 1e-8),
        sign,
        // gap relative to max(1e-6, 1e-3|V̇|)
        CheckResult::measured("Lyapunov FD match", fd, 1.0),
    ]
}

/// Runs every check with random states drawn from `seed`.
pub fn run_checks(model: &RobotModel, gains: &ControllerGains, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model_check = check_model(model);
    if !model_check.pass {
        return vec![model_check];
    }
    let mut out = vec![
        model_check,
        check_crba(model, &mut rng),
        check_cmm(model, &mut rng),
        check_jacobians(model, &mut rng),
        check_newton_euler(model, &mut rng),
        check_energy(model, &mut rng),
        check_qp(model, &mut rng),
    ];
    out.extend(check_lyapunov(model, gains));
    out
}
