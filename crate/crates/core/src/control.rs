//! Centroidal-momentum control law, input allocation and joint torque loop.
//!
//! Momentum quantities are ordered (linear; angular) and taken at the CoM with
//! inertial orientation. The controller sees the plant through a
//! [`DynamicsWorkspace`], possibly scaled to model inertial mismatch.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector, Matrix6, Matrix6x4, SymmetricEigen, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{e3, DynamicsWorkspace};
use crate::qp::{ActiveSetSolver, AllocationProblem, AllocationSolution, Bounds, QpError, Weights};
use crate::spatial::{skew, vee_of_skew_part, Mat3, Rotation, Vec3};

/// Engine thrust limit in N.
pub const THRUST_MAX: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("{0} must be symmetric positive definite")]
    NotSpd(&'static str),
    #[error("{name}: expected {expected} entries, got {got}")]
    Dimension { name: &'static str, expected: usize, got: usize },
    #[error("bound '{0}' must be positive and finite")]
    Bound(&'static str),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("base block of the {0} is singular")]
    Singular(&'static str),
    #[error(transparent)]
    Qp(#[from] QpError),
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    let sym = (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
    sym && m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn to6(m: &DMatrix<f64>) -> Matrix6<f64> {
    Matrix6::from_iterator(m.iter().copied())
}

/// Every gain of the controller. Build through [`GainConfig::build`] or
/// [`ControllerGains::paper_defaults`], which validate the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub kp: Matrix6<f64>,
    pub kd: Matrix6<f64>,
    pub ko: Matrix6<f64>,
    pub weights: Weights,
    pub postural_kp: DMatrix<f64>,
    /// `s_r`.
    pub postural_reference: DVector<f64>,
    pub torque_ki: DMatrix<f64>,
    pub torque_kp: DMatrix<f64>,
    /// Bounds on `(u₁, u₂)`.
    pub bounds: Bounds,
    pub thrust_max: f64,
}

impl ControllerGains {
    pub fn paper_defaults(postural_reference: DVector<f64>) -> Self {
        GainConfig::default()
            .build(postural_reference)
            .expect("default gains are valid")
    }

    pub fn n_joints(&self) -> usize {
        self.postural_reference.len()
    }

    /// `K̃ = K_P + K_D + K_O⁻¹`.
    pub fn k_tilde(&self) -> Matrix6<f64> {
        self.kp + self.kd + self.ko.try_inverse().expect("K_O is positive definite")
    }

    pub fn validate(&self) -> Result<(), GainError> {
        let n = self.n_joints();
        for (name, m) in [("K_P", &self.kp), ("K_D", &self.kd), ("K_O", &self.ko)] {
            if !is_spd(&DMatrix::from_iterator(6, 6, m.iter().copied())) {
                return Err(GainError::NotSpd(name));
            }
        }
        for (name, m) in [
            ("postural K_P", &self.postural_kp),
            ("torque K_I", &self.torque_ki),
            ("torque K_P", &self.torque_kp),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return Err(GainError::Dimension { name, expected: n, got: m.nrows() });
            }
            if n > 0 && !is_spd(m) {
                return Err(GainError::NotSpd(name));
            }
        }
        if self.bounds.len() != 4 + n {
            return Err(GainError::Dimension {
                name: "bounds",
                expected: 4 + n,
                got: self.bounds.len(),
            });
        }
        for i in 0..4 + n {
            if !(self.bounds.upper[i] > self.bounds.lower[i]) {
                return Err(GainError::Bound("upper > lower"));
            }
        }
        if !(self.thrust_max > 0.0 && self.thrust_max.is_finite()) {
            return Err(GainError::Bound("thrust_max"));
        }
        // exercises the weight checks
        AllocationProblem::assemble(
            Vector6::zeros(),
            Matrix6x4::zeros(),
            DMatrix::zeros(6, n),
            DVector::zeros(n),
            self.weights,
            self.bounds.clone(),
        )?;
        Ok(())
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }
}

/// Postural stiffness used for the 25-joint layout.
pub fn paper_postural_diagonal() -> Vec<f64> {
    let mut d = vec![1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 10.0, 1.0, 5.0, 5.0, 5.0, 10.0, 1.0];
    d.extend(std::iter::repeat_n(1.0, 12));
    d
}

/// Serializable gain description. Matrices are diagonal; omitted optional
/// entries take their derived defaults (`K_D = 2√K_P`, `K_P^s = 2√K_I^s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    pub kp: [f64; 6],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kd: Option<[f64; 6]>,
    pub ko: [f64; 6],
    pub lambda_m: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub postural_kp: Option<Vec<f64>>,
    pub torque_ki: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub torque_kp: Option<f64>,
    /// `|u₁|` limit, N/s.
    pub thrust_rate_bound: f64,
    /// `|u₂|` limit, deg/s.
    pub joint_rate_bound_deg: f64,
    pub thrust_max: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        GainConfig {
            kp: [5.0, 5.0, 5.0, 50.0, 50.0, 50.0],
            kd: None,
            ko: [10.0; 6],
            lambda_m: 50.0,
            lambda_p: 1.0,
            lambda_s: 50.0,
            lambda_t: 1.0,
            postural_kp: None,
            torque_ki: 1000.0,
            torque_kp: None,
            thrust_rate_bound: 45.0,
            joint_rate_bound_deg: 100.0,
            thrust_max: THRUST_MAX,
        }
    }
}

impl GainConfig {
    pub fn build(&self, postural_reference: DVector<f64>) -> Result<ControllerGains, GainError> {
        let n = postural_reference.len();
        let diag6 = |v: &[f64; 6]| Matrix6::from_diagonal(&Vector6::from_column_slice(v));
        let kp = diag6(&self.kp);
        let kd = match &self.kd {
            Some(v) => diag6(v),
            None => to6(&sqrt_spd(&DMatrix::from_iterator(6, 6, kp.iter().copied()))) * 2.0,
        };
        let postural = match &self.postural_kp {
            Some(v) => v.clone(),
            None if n == 25 => paper_postural_diagonal(),
            None => vec![1.0; n],
        };
        if postural.len() != n {
            return Err(GainError::Dimension {
                name: "postural_kp",
                expected: n,
                got: postural.len(),
            });
        }
        if !(self.thrust_rate_bound > 0.0) || !self.thrust_rate_bound.is_finite() {
            return Err(GainError::Bound("thrust_rate_bound"));
        }
        if !(self.joint_rate_bound_deg > 0.0) || !self.joint_rate_bound_deg.is_finite() {
            return Err(GainError::Bound("joint_rate_bound_deg"));
        }
        let ki = self.torque_ki;
        let kps = self.torque_kp.unwrap_or(2.0 * ki.max(0.0).sqrt());
        let gains = ControllerGains {
            kp,
            kd,
            ko: diag6(&self.ko),
            weights: Weights {
                momentum: self.lambda_m,
                postural: self.lambda_p,
                joint_regularization: self.lambda_s,
                thrust_regularization: self.lambda_t,
            },
            postural_kp: DMatrix::from_diagonal(&DVector::from_vec(postural)),
            postural_reference,
            torque_ki: DMatrix::identity(n, n) * ki,
            torque_kp: DMatrix::identity(n, n) * kps,
            bounds: Bounds::symmetric(n, self.thrust_rate_bound, self.joint_rate_bound_deg.to_radians()),
            thrust_max: self.thrust_max,
        };
        gains.validate()?;
        Ok(gains)
    }
}

/// How the integral term `I` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// `İ = h̃` for both rows.
    Velocity,
    /// `I^l = m(c − r)`, `İ^ω = h̃^ω`.
    Position,
    /// `İ^l = h̃^l`, `I^ω = Ī (skew(R_dᵀR))^∨`.
    Orientation,
    /// `I^l = m(c − r)`, `I^ω = Ī (skew(R_dᵀR))^∨`.
    PositionOrientation,
}

impl ControlMode {
    pub fn needs_orientation(&self) -> bool {
        matches!(self, ControlMode::Orientation | ControlMode::PositionOrientation)
    }
}

/// Task reference at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    /// `r`, `ṙ`, `r̈`, `r⃛`.
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub jerk: Vec3,
    /// `h_d^ω` and its first two derivatives.
    pub angular_momentum: Vec3,
    pub angular_momentum_rate: Vec3,
    pub angular_momentum_accel: Vec3,
    pub orientation: Option<Rotation>,
}

impl ReferenceSample {
    pub fn hold(position: Vec3, orientation: Option<Rotation>) -> Self {
        ReferenceSample {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            jerk: Vec3::zeros(),
            angular_momentum: Vec3::zeros(),
            angular_momentum_rate: Vec3::zeros(),
            angular_momentum_accel: Vec3::zeros(),
            orientation,
        }
    }

    /// `(h_d, ḣ_d, ḧ_d)` with `h_d = (m ṙ, h_d^ω)`.
    pub fn momentum(&self, mass: f64) -> MomentumReference {
        let stack = |l: Vec3, w: Vec3| Vector6::new(l.x, l.y, l.z, w.x, w.y, w.z);
        MomentumReference {
            h_d: stack(self.velocity * mass, self.angular_momentum),
            h_d_dot: stack(self.acceleration * mass, self.angular_momentum_rate),
            h_d_ddot: stack(self.jerk * mass, self.angular_momentum_accel),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumReference {
    pub h_d: Vector6<f64>,
    pub h_d_dot: Vector6<f64>,
    pub h_d_ddot: Vector6<f64>,
}

/// `(skew(R_dᵀR))^∨`, in the axes of `R_d`. For `R = R_d R_z(θ)` this is
/// `(0, 0, sin θ)`.
pub fn orientation_error(r: &Rotation, r_d: &Rotation) -> Vec3 {
    vee_of_skew_part(&(r_d.matrix().transpose() * r.matrix()))
}

/// [`orientation_error`] in inertial axes, `R_d (skew(R_dᵀR))^∨ = (skew(R R_dᵀ))^∨`.
/// With `Ṙ = S(ω)R` and `ω = −k·e`, `tr(1 − R_dᵀR)` is non-increasing.
pub fn orientation_error_inertial(r: &Rotation, r_d: &Rotation) -> Vec3 {
    r_d.matrix() * orientation_error(r, r_d)
}

/// Integral term for `mode`. `accumulated` carries the rows integrated as `İ = h̃`.
#[allow(clippy::too_many_arguments)]
pub fn integral_term(
    mode: ControlMode,
    accumulated: &Vector6<f64>,
    mass: f64,
    com: &Vec3,
    reference: &ReferenceSample,
    locked_inertia: &Mat3,
    base_rotation: &Rotation,
) -> Vector6<f64> {
    let mut out = *accumulated;
    if matches!(mode, ControlMode::Position | ControlMode::PositionOrientation) {
        out.fixed_rows_mut::<3>(0).copy_from(&((com - reference.position) * mass));
    }
    if mode.needs_orientation() {
        let r_d = reference.orientation.unwrap_or(*base_rotation);
        out.fixed_rows_mut::<3>(3)
            .copy_from(&(locked_inertia * orientation_error_inertial(base_rotation, &r_d)));
    }
    out
}

/// Per-step momentum-control data.
#[derive(Debug, Clone)]
pub struct MomentumTerms {
    pub h: Vector6<f64>,
    pub h_d: Vector6<f64>,
    pub h_d_dot: Vector6<f64>,
    pub h_d_ddot: Vector6<f64>,
    /// `h̃ = h − h_d`.
    pub h_tilde: Vector6<f64>,
    pub integral: Vector6<f64>,
    /// `F = −m g e₃ − ḣ_d + K_D h̃ + K_P I`.
    pub f_term: Vector6<f64>,
    /// `ξ̃ = A T + F`.
    pub xi_tilde: Vector6<f64>,
    /// `ḣ̃ = ξ̃ − K_D h̃ − K_P I`.
    pub h_tilde_dot: Vector6<f64>,
    pub a: Matrix6x4<f64>,
    pub s_tilde: [Matrix6<f64>; 4],
    /// Stacked `(ṙ_i; ω_i)` Jacobians of the four thrusters, 24×(n+6).
    pub j_r: DMatrix<f64>,
    /// `Λ = −(S̃₁ … S̃₄) J_r`, 6×(n+6).
    pub lambda: DMatrix<f64>,
    pub cmm_base: Matrix6<f64>,
    pub cmm_joints: DMatrix<f64>,
    pub com: Vec3,
    pub mass: f64,
    pub locked_inertia: Mat3,
}

impl MomentumTerms {
    pub fn lambda_b(&self) -> Matrix6<f64> {
        Matrix6::from_iterator(self.lambda.columns(0, 6).iter().copied())
    }

    pub fn lambda_s(&self) -> DMatrix<f64> {
        let n = self.lambda.ncols() - 6;
        self.lambda.columns(6, n).into_owned()
    }
}

/// `S̃_i` for thrust `t`, direction `ı` and lever `r = o_i − c`.
pub fn s_tilde(t: f64, dir: &Vec3, r: &Vec3) -> Matrix6<f64> {
    let si = skew(dir) * t;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&si);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&si);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(skew(r) * si));
    out
}

/// Momentum error terms with `h = J_h ν`.
pub fn momentum_error_terms(
    ws: &DynamicsWorkspace,
    nu: &DVector<f64>,
    thrust: &Vector4<f64>,
    integral: &Vector6<f64>,
    reference: &MomentumReference,
    gains: &ControllerGains,
) -> MomentumTerms {
    momentum_error_terms_at(ws, &ws.momentum(nu), thrust, integral, reference, gains)
}

/// Momentum error terms for a given momentum `h`.
pub fn momentum_error_terms_at(
    ws: &DynamicsWorkspace,
    h: &Vector6<f64>,
    thrust: &Vector4<f64>,
    integral: &Vector6<f64>,
    reference: &MomentumReference,
    gains: &ControllerGains,
) -> MomentumTerms {
    let nv = ws.cmm.ncols();
    let h_tilde = h - reference.h_d;
    let f_term = -e3() * (ws.mass * ws.gravity) - reference.h_d_dot + gains.kd * h_tilde + gains.kp * integral;
    let a = ws.thrust_map;
    let xi_tilde = a * thrust + f_term;
    let h_tilde_dot = xi_tilde - gains.kd * h_tilde - gains.kp * integral;
    let j_com = ws.cmm.rows(0, 3) / ws.mass;
    let mut j_r = DMatrix::zeros(24, nv);
    let mut lambda = DMatrix::zeros(6, nv);
    let mut s_tildes = [Matrix6::zeros(); 4];
    for (i, frame) in ws.kinematics.thrusters.iter().enumerate() {
        let jo = &ws.thruster_jacobians[i];
        let mut block = j_r.rows_mut(6 * i, 6);
        block.rows_mut(0, 3).copy_from(&(jo.rows(0, 3) - &j_com));
        block.rows_mut(3, 3).copy_from(&jo.rows(3, 3));
        let st = s_tilde(thrust[i], &frame.direction, &(frame.position - ws.com));
        lambda -= DMatrix::from_iterator(6, 6, st.iter().copied()) * j_r.rows(6 * i, 6);
        s_tildes[i] = st;
    }
    MomentumTerms {
        h: *h,
        h_d: reference.h_d,
        h_d_dot: reference.h_d_dot,
        h_d_ddot: reference.h_d_ddot,
        h_tilde,
        integral: *integral,
        f_term,
        xi_tilde,
        h_tilde_dot,
        a,
        s_tilde: s_tildes,
        j_r,
        lambda,
        cmm_base: ws.cmm_base(),
        cmm_joints: ws.cmm_joints(),
        com: ws.com,
        mass: ws.mass,
        locked_inertia: ws.locked_inertia,
    }
}

/// `δ` and `B` of the stabilizing condition `δ + A u₁ + B u₂ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Terms {
    pub delta: Vector6<f64>,
    pub b: DMatrix<f64>,
}

/// `δ = (Λ_b + K̃ J_h^b) v_B + (K_D + 1) ḣ̃ + K_P I − ḧ_d − K̃ h_d`, `B = Λ_s + K̃ J_h^s`.
pub fn theorem1_terms(terms: &MomentumTerms, v_b: &Vector6<f64>, gains: &ControllerGains) -> Theorem1Terms {
    let kt = gains.k_tilde();
    let delta = (terms.lambda_b() + kt * terms.cmm_base) * v_b
        + (gains.kd + Matrix6::identity()) * terms.h_tilde_dot
        + gains.kp * terms.integral
        - terms.h_d_ddot
        - kt * terms.h_d;
    let b = terms.lambda_s() + DMatrix::from_iterator(6, 6, kt.iter().copied()) * &terms.cmm_joints;
    Theorem1Terms { delta, b }
}

/// Same condition with the base velocity eliminated through
/// `v_B = (J_h^b)⁻¹(h − J_h^s u₂)`, for states that carry `h` directly.
pub fn theorem1_terms_momentum(terms: &MomentumTerms, gains: &ControllerGains) -> Result<Theorem1Terms, ControlError> {
    let kt = gains.k_tilde();
    let jb_inv = terms.cmm_base.try_inverse().ok_or(ControlError::Singular("centroidal momentum matrix"))?;
    let lb_jinv = terms.lambda_b() * jb_inv;
    let delta = lb_jinv * terms.h
        + kt * terms.h_tilde
        + (gains.kd + Matrix6::identity()) * terms.h_tilde_dot
        + gains.kp * terms.integral
        - terms.h_d_ddot;
    let b = terms.lambda_s() - DMatrix::from_iterator(6, 6, lb_jinv.iter().copied()) * &terms.cmm_joints;
    Ok(Theorem1Terms { delta, b })
}

/// `p = −K_P^p (s − s_r)`.
pub fn postural_task(s: &DVector<f64>, gains: &ControllerGains) -> DVector<f64> {
    -(&gains.postural_kp * (s - &gains.postural_reference))
}

/// Joint dynamics with the base eliminated: `M̄ s̈ + b̄ = τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpace {
    pub m_bar: DMatrix<f64>,
    pub b_bar: DVector<f64>,
}

/// `M̄ = ℍ − 𝔽ᵀ𝕀⁻¹𝔽`, `b̄ = b_s − f_s + 𝔽ᵀ𝕀⁻¹(f_b − b_b)`.
pub fn joint_space_reduction(ws: &DynamicsWorkspace, thrust: &Vector4<f64>) -> Result<JointSpace, ControlError> {
    let nv = ws.mass_matrix.nrows();
    let n = nv - 6;
    let m = &ws.mass_matrix;
    let ib = m.view((0, 0), (6, 6)).into_owned();
    let fm = m.view((0, 6), (6, n)).into_owned();
    let hm = m.view((6, 6), (n, n)).into_owned();
    let chol = ib.cholesky().ok_or(ControlError::Singular("mass matrix"))?;
    let f = ws.thrust_generalized_force(thrust);
    let fb = f.rows(0, 6).into_owned();
    let bb = ws.bias.rows(0, 6).into_owned();
    let inv_f = chol.solve(&fm);
    let m_bar = &hm - fm.transpose() * &inv_f;
    let b_bar = ws.bias.rows(6, n) - f.rows(6, n) + inv_f.transpose() * (fb - bb);
    Ok(JointSpace {
        m_bar: (&m_bar + m_bar.transpose()) * 0.5,
        b_bar,
    })
}

/// `τ = b̄ + M̄(K_P^s(u₂* − ṡ) + K_I^s ∫(u₂* − ṡ))`.
pub fn torque_law(
    js: &JointSpace,
    s_dot: &DVector<f64>,
    u2: &DVector<f64>,
    torque_integral: &DVector<f64>,
    gains: &ControllerGains,
) -> DVector<f64> {
    let err = u2 - s_dot;
    &js.b_bar + &js.m_bar * (&gains.torque_kp * err + &gains.torque_ki * torque_integral)
}

/// `V = ½IᵀK_P I + ½|h̃|² + ½ξ̃ᵀK_O ξ̃`.
pub fn lyapunov_value(terms: &MomentumTerms, gains: &ControllerGains) -> f64 {
    0.5 * terms.integral.dot(&(gains.kp * terms.integral))
        + 0.5 * terms.h_tilde.norm_squared()
        + 0.5 * terms.xi_tilde.dot(&(gains.ko * terms.xi_tilde))
}

/// `V̇ = −h̃ᵀK_D h̃ − ξ̃ᵀK_O ξ̃ + ξ̃ᵀK_O ε`, with `ε` the residual of the
/// stabilizing condition evaluated at the realized `(Ṫ, ṡ)`.
pub fn lyapunov_rate(terms: &MomentumTerms, gains: &ControllerGains, residual: &Vector6<f64>) -> f64 {
    -terms.h_tilde.dot(&(gains.kd * terms.h_tilde)) - terms.xi_tilde.dot(&(gains.ko * terms.xi_tilde))
        + terms.xi_tilde.dot(&(gains.ko * residual))
}

/// Controller states integrated by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Rows of `I` obtained by integrating `h̃`.
    pub integral: Vector6<f64>,
    /// Thrust intensities, N.
    pub thrust: Vector4<f64>,
    /// `∫(u₂* − ṡ)`.
    pub torque_integral: DVector<f64>,
}

impl ControllerState {
    pub fn new(thrust: Vector4<f64>, n_joints: usize) -> Self {
        ControllerState {
            integral: Vector6::zeros(),
            thrust,
            torque_integral: DVector::zeros(n_joints),
        }
    }
}

/// How the allocation problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Allocation {
    /// The weighted box-constrained QP.
    Weighted,
    /// Exact enforcement of the stabilizing condition (the `λ_m → ∞` limit).
    Exact,
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub u1: Vector4<f64>,
    pub u2: DVector<f64>,
    pub tau: DVector<f64>,
    pub terms: MomentumTerms,
    pub theorem: Theorem1Terms,
    pub problem: AllocationProblem,
    pub allocation: AllocationSolution,
}

impl ControlOutput {
    /// `δ + A Ṫ + B ṡ` for the realized thrust rate and joint velocity.
    pub fn realized_residual(&self, thrust_rate: &Vector4<f64>, s_dot: &DVector<f64>) -> Vector6<f64> {
        self.theorem.delta + self.terms.a * thrust_rate + &self.theorem.b * s_dot
    }
}

/// Complete feedback law: momentum terms, allocation QP, torque loop.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: ControllerGains,
    pub mode: ControlMode,
    /// Mass/inertia factor of the controller's model relative to the plant.
    pub model_scale: f64,
    pub allocation: Allocation,
    solver: ActiveSetSolver,
}

impl Controller {
    pub fn new(gains: ControllerGains, mode: ControlMode, model_scale: f64) -> Self {
        Controller {
            gains,
            mode,
            model_scale,
            allocation: Allocation::Weighted,
            solver: ActiveSetSolver::new(),
        }
    }

    /// The plant workspace as seen by the controller.
    pub fn view<'a>(&self, ws: &'a DynamicsWorkspace) -> Cow<'a, DynamicsWorkspace> {
        if self.model_scale == 1.0 {
            Cow::Borrowed(ws)
        } else {
            Cow::Owned(ws.scaled(self.model_scale))
        }
    }

    pub fn compute(
        &mut self,
        plant: &DynamicsWorkspace,
        base_rotation: &Rotation,
        s: &DVector<f64>,
        nu: &DVector<f64>,
        state: &ControllerState,
        reference: &ReferenceSample,
    ) -> Result<ControlOutput, ControlError> {
        let ws = self.view(plant);
        let n = s.len();
        let integral = integral_term(
            self.mode,
            &state.integral,
            ws.mass,
            &ws.com,
            reference,
            &ws.locked_inertia,
            base_rotation,
        );
        let mref = reference.momentum(ws.mass);
        let terms = momentum_error_terms(&ws, nu, &state.thrust, &integral, &mref, &self.gains);
        let v_b = Vector6::from_iterator(nu.rows(0, 6).iter().copied());
        let theorem = theorem1_terms(&terms, &v_b, &self.gains);
        let postural = postural_task(s, &self.gains);
        let problem = AllocationProblem::assemble(
            theorem.delta,
            terms.a,
            theorem.b.clone(),
            postural,
            self.gains.weights,
            self.gains.bounds.clone(),
        )?;
        let allocation = match self.allocation {
            Allocation::Weighted => problem.solve(&mut self.solver)?,
            Allocation::Exact => problem.solve_exact()?,
        };
        let js = joint_space_reduction(&ws, &state.thrust)?;
        let s_dot = nu.rows(6, n).into_owned();
        let tau = torque_law(&js, &s_dot, &allocation.u2, &state.torque_integral, &self.gains);
        Ok(ControlOutput {
            u1: allocation.u1,
            u2: allocation.u2.clone(),
            tau,
            terms,
            theorem,
            problem,
            allocation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Configuration;
    use crate::model::{initial_joint_configuration, surrogate_humanoid};

    fn default_gains(n: usize) -> ControllerGains {
        ControllerGains::paper_defaults(DVector::zeros(n))
    }

    #[test]
    fn default_gains_match_listing() {
        let g = default_gains(25);
        assert_eq!(g.kp, Matrix6::from_diagonal(&Vector6::new(5.0, 5.0, 5.0, 50.0, 50.0, 50.0)));
        assert!((g.kd[(0, 0)] - 2.0 * 5f64.sqrt()).abs() < 1e-12);
        assert!((g.kd[(3, 3)] - 2.0 * 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(g.ko, Matrix6::identity() * 10.0);
        assert!((g.torque_kp[(0, 0)] - 2.0 * 1000f64.sqrt()).abs() < 1e-12);
        assert!((g.bounds.upper[4] - 100f64.to_radians()).abs() < 1e-15);
        assert_eq!(g.bounds.upper[0], 45.0);
        let kt = g.k_tilde();
        assert!((kt[(0, 0)] - (5.0 + 2.0 * 5f64.sqrt() + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn postural_listing_scales_unit_deviation() {
        let g = default_gains(25);
        let expected = paper_postural_diagonal();
        for j in 0..25 {
            let mut s = DVector::zeros(25);
            s[j] = 1.0;
            let p = postural_task(&s, &g);
            assert_eq!(p[j], -expected[j]);
            assert_eq!(p.iter().filter(|v| **v != 0.0).count(), 1);
        }
        assert_eq!(postural_task(&DVector::zeros(25), &g), DVector::zeros(25));
    }

    #[test]
    fn invalid_gains_rejected() {
        let mut cfg = GainConfig::default();
        cfg.ko[2] = -1.0;
        assert_eq!(cfg.build(DVector::zeros(3)), Err(GainError::NotSpd("K_O")));
        let mut cfg = GainConfig::default();
        cfg.postural_kp = Some(vec![1.0; 4]);
        assert!(matches!(cfg.build(DVector::zeros(3)), Err(GainError::Dimension { .. })));
        let mut cfg = GainConfig::default();
        cfg.thrust_rate_bound = 0.0;
        assert!(cfg.build(DVector::zeros(3)).is_err());
    }

    #[test]
    fn orientation_error_cases() {
        let rd = Rotation::from_rpy(0.3, -0.2, 1.0);
        assert!(orientation_error(&rd, &rd).amax() < 1e-15);
        for theta in [1e-3, 1e-2, 0.1] {
            let r = rd.compose(&Rotation::about_z(theta));
            let e = orientation_error(&r, &rd);
            assert!((e - Vec3::new(0.0, 0.0, theta.sin())).amax() < 1e-12);
            // small-angle series: sin θ ≈ θ − θ³/6
            assert!((e.z - (theta - theta.powi(3) / 6.0)).abs() < theta.powi(5));
            let inertial = orientation_error_inertial(&r, &rd);
            assert!((inertial - rd.apply(&Vec3::z()) * theta.sin()).amax() < 1e-12);
        }
        let half_turn = rd.compose(&Rotation::about_z(std::f64::consts::PI));
        assert!(orientation_error(&half_turn, &rd).amax() < 1e-15);
    }

    #[test]
    fn kinematic_orientation_feedback_contracts() {
        let rd = Rotation::from_rpy(0.4, -0.7, 1.2);
        for start in [(2.0, 0.5, -1.0), (-0.3, 1.1, 2.5), (0.0, 0.0, 2.8)] {
            let mut r = Rotation::from_rpy(start.0, start.1, start.2);
            let distance = |r: &Rotation| 3.0 - (rd.matrix().transpose() * r.matrix()).trace();
            let mut last = distance(&r);
            for _ in 0..10000 {
                let omega = -2.0 * orientation_error_inertial(&r, &rd);
                r = Rotation::from_axis_angle(&omega, 1e-3 * omega.norm()).compose(&r);
                let d = distance(&r);
                assert!(d <= last + 1e-12);
                last = d;
            }
            assert!(last < 1e-6, "{last}");
        }
    }

    #[test]
    fn orientation_integral_for_sixty_degrees() {
        let model = surrogate_humanoid();
        let q = Configuration {
            base_position: Vec3::zeros(),
            base_rotation: Rotation::identity(),
            joints: initial_joint_configuration(&model),
        };
        let ws = DynamicsWorkspace::compute(&model, &q, &DVector::zeros(model.nv()));
        let rd = Rotation::about_z(60f64.to_radians()).compose(&q.base_rotation);
        let reference = ReferenceSample::hold(ws.com, Some(rd));
        let i = integral_term(
            ControlMode::PositionOrientation,
            &Vector6::zeros(),
            ws.mass,
            &ws.com,
            &reference,
            &ws.locked_inertia,
            &q.base_rotation,
        );
        let expected = ws.locked_inertia * (Vec3::z() * (-60f64.to_radians()).sin());
        assert!((i.fixed_rows::<3>(3) - expected).amax() < 1e-12);
        assert!(i.fixed_rows::<3>(0).amax() < 1e-15);
    }

    #[test]
    fn s_tilde_structure() {
        let dir = Vec3::new(0.0, 0.6, 0.8);
        let r = Vec3::new(0.1, -0.2, 0.3);
        assert_eq!(s_tilde(0.0, &dir, &r), Matrix6::zeros());
        let st = s_tilde(1.0, &dir, &r);
        assert_eq!(st.fixed_view::<3, 3>(0, 0).into_owned(), Mat3::zeros());
        assert_eq!(st.fixed_view::<3, 3>(0, 3).into_owned(), skew(&dir));
        assert_eq!(st.fixed_view::<3, 3>(3, 0).into_owned(), skew(&dir));
        assert!((st.fixed_view::<3, 3>(3, 3) - skew(&r) * skew(&dir)).amax() < 1e-15);
    }

    fn hover_state() -> (crate::model::RobotModel, DynamicsWorkspace, Vector4<f64>) {
        let model = surrogate_humanoid();
        let q = Configuration::neutral(&model);
        let ws = DynamicsWorkspace::compute(&model, &q, &DVector::zeros(model.nv()));
        let t = Vector4::repeat(ws.mass * ws.gravity / 4.0);
        (model, ws, t)
    }

    #[test]
    fn hover_equilibrium_is_a_fixed_point() {
        let (model, ws, t) = hover_state();
        let g = default_gains(model.dof());
        let mref = ReferenceSample::hold(ws.com, None).momentum(ws.mass);
        let terms = momentum_error_terms(&ws, &DVector::zeros(model.nv()), &t, &Vector6::zeros(), &mref, &g);
        assert!(terms.xi_tilde.amax() < 1e-10);
        let th = theorem1_terms(&terms, &Vector6::zeros(), &g);
        assert!(th.delta.amax() < 1e-9);
        assert!(lyapunov_value(&terms, &g) < 1e-18);
        assert!(lyapunov_rate(&terms, &g, &Vector6::zeros()).abs() < 1e-18);
    }

    #[test]
    fn lyapunov_rate_is_nonpositive_without_residual() {
        let (model, ws, t) = hover_state();
        let g = default_gains(model.dof());
        let mut mref = ReferenceSample::hold(ws.com, None).momentum(ws.mass);
        mref.h_d[0] = 3.0;
        mref.h_d[5] = -1.0;
        let integral = Vector6::new(0.1, 0.2, -0.1, 0.3, 0.0, 0.1);
        let terms = momentum_error_terms(&ws, &DVector::zeros(model.nv()), &(t * 1.1), &integral, &mref, &g);
        assert!(lyapunov_value(&terms, &g) > 0.0);
        assert!(lyapunov_rate(&terms, &g, &Vector6::zeros()) < 0.0);
    }

    #[test]
    fn momentum_form_matches_velocity_form() {
        let model = surrogate_humanoid();
        let q = Configuration {
            base_position: Vec3::new(0.2, 0.1, -0.3),
            base_rotation: Rotation::from_rpy(0.1, 0.2, 0.3),
            joints: initial_joint_configuration(&model),
        };
        let nu = DVector::from_fn(model.nv(), |i, _| ((i as f64) * 0.37).sin() * 0.3);
        let ws = DynamicsWorkspace::compute(&model, &q, &nu);
        let g = default_gains(model.dof());
        let mut mref = ReferenceSample::hold(ws.com, None).momentum(ws.mass);
        mref.h_d[2] = 30.0;
        let t = Vector4::new(70.0, 80.0, 75.0, 78.0);
        let terms = momentum_error_terms(&ws, &nu, &t, &Vector6::zeros(), &mref, &g);
        let v_b = Vector6::from_iterator(nu.rows(0, 6).iter().copied());
        let th = theorem1_terms(&terms, &v_b, &g);
        let thm = theorem1_terms_momentum(&terms, &g).unwrap();
        let u1 = Vector4::new(1.0, -2.0, 0.5, 0.0);
        let u2 = nu.rows(6, model.dof()).into_owned();
        let lhs = th.delta + terms.a * u1 + &th.b * &u2;
        let rhs = thm.delta + terms.a * u1 + &thm.b * &u2;
        assert!((lhs - rhs).amax() < 1e-8 * (1.0 + lhs.amax()));
    }

    #[test]
    fn torque_law_feedforward_and_schur_complement() {
        let model = surrogate_humanoid();
        let q = Configuration {
            base_position: Vec3::zeros(),
            base_rotation: Rotation::from_rpy(0.4, -0.1, 0.2),
            joints: DVector::from_fn(model.dof(), |i, _| (i as f64 * 0.7).cos() * 0.5),
        };
        let nu = DVector::from_fn(model.nv(), |i, _| (i as f64 * 0.3).sin() * 0.4);
        let ws = DynamicsWorkspace::compute(&model, &q, &nu);
        let t = Vector4::new(60.0, 70.0, 80.0, 90.0);
        let g = default_gains(model.dof());
        let js = joint_space_reduction(&ws, &t).unwrap();
        let n = model.dof();
        // explicit block inversion oracle
        let minv = ws.mass_matrix.clone().try_inverse().unwrap();
        let schur_inv = minv.view((6, 6), (n, n)).into_owned();
        let expected = schur_inv.try_inverse().unwrap();
        assert!((&js.m_bar - &expected).amax() < 1e-10 * (1.0 + expected.amax()));
        let s_dot = nu.rows(6, n).into_owned();
        let tau = torque_law(&js, &s_dot, &s_dot, &DVector::zeros(n), &g);
        assert!((tau - &js.b_bar).amax() < 1e-12);
    }

    #[test]
    fn torque_law_realizes_commanded_joint_acceleration() {
        let model = surrogate_humanoid();
        let q = Configuration {
            base_position: Vec3::zeros(),
            base_rotation: Rotation::identity(),
            joints: initial_joint_configuration(&model),
        };
        let nu = DVector::from_fn(model.nv(), |i, _| (i as f64 * 0.11).cos() * 0.2);
        let ws = DynamicsWorkspace::compute(&model, &q, &nu);
        let t = Vector4::repeat(70.0);
        let g = default_gains(model.dof());
        let n = model.dof();
        let js = joint_space_reduction(&ws, &t).unwrap();
        let u2 = DVector::from_fn(n, |i, _| 0.1 * (i as f64).sin());
        let z = DVector::from_fn(n, |i, _| 0.01 * (i as f64).cos());
        let tau = torque_law(&js, &nu.rows(6, n).into_owned(), &u2, &z, &g);
        let acc = crate::dynamics::forward_dynamics(&model, &q, &nu, &tau, &t).unwrap();
        let err = &u2 - nu.rows(6, n);
        let commanded = &g.torque_kp * err + &g.torque_ki * z;
        assert!((acc.rows(6, n) - commanded).amax() < 1e-8);
    }

    #[test]
    fn single_body_torque_law_is_empty() {
        let g = GainConfig::default().build(DVector::zeros(0)).unwrap();
        let js = JointSpace {
            m_bar: DMatrix::zeros(0, 0),
            b_bar: DVector::zeros(0),
        };
        let tau = torque_law(&js, &DVector::zeros(0), &DVector::zeros(0), &DVector::zeros(0), &g);
        assert_eq!(tau.len(), 0);
    }

    #[test]
    fn gain_config_round_trips_through_toml() {
        let mut cfg = GainConfig::default();
        cfg.kd = Some([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let text = toml::to_string(&cfg).unwrap();
        let back: GainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: GainConfig = toml::from_str("lambda_m = 500.0").unwrap();
        assert_eq!(partial.lambda_m, 500.0);
        assert_eq!(partial.kp, GainConfig::default().kp);
    }
}
