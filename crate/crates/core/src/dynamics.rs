//! Floating-base rigid-body dynamics of a [`RobotModel`].
//!
//! Generalized velocity is `ν = (ȯ_B, ω_B, ṡ)`: base origin velocity and base
//! angular velocity, both in inertial coordinates, followed by joint rates.
//! Internally all spatial quantities are Plücker vectors in inertial
//! coordinates taken at the inertial origin, ordered (angular; linear). With
//! that choice composite inertias add without transforms and both CRBA and
//! RNEA reduce to sums along the tree.

use nalgebra::{DMatrix, DVector, Matrix3x4, Matrix6, Matrix6x4, SMatrix, Vector4, Vector6};
use thiserror::Error;

use crate::model::{Pose, RobotModel};
use crate::spatial::{skew, Mat3, Rotation, Twist, Vec3};

pub type SpatialVec = Vector6<f64>;

/// `e₃ = (0,0,1,0,0,0)`: unit vertical force in centroidal (linear; angular) order.
pub fn e3() -> Vector6<f64> {
    Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("unknown frame '{0}'")]
    UnknownFrame(String),
    #[error("mass matrix is not positive definite")]
    MassMatrixNotPd,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// `q = (o_B, R_B, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub base_position: Vec3,
    pub base_rotation: Rotation,
    pub joints: DVector<f64>,
}

impl Configuration {
    pub fn neutral(model: &RobotModel) -> Self {
        Configuration {
            base_position: Vec3::zeros(),
            base_rotation: Rotation::identity(),
            joints: DVector::zeros(model.dof()),
        }
    }

    /// `q ⊕ ν·dt` with the exponential map on the rotation.
    pub fn integrate(&self, nu: &DVector<f64>, dt: f64) -> Self {
        let v = nu.fixed_rows::<3>(0).into_owned();
        let w = nu.fixed_rows::<3>(3).into_owned();
        let n = self.joints.len();
        let delta = Rotation::from_axis_angle(&w, w.norm() * dt);
        Configuration {
            base_position: self.base_position + v * dt,
            base_rotation: delta.compose(&self.base_rotation),
            joints: &self.joints + nu.rows(6, n) * dt,
        }
    }
}

/// Splits `ν` into its base twist and joint rates.
pub fn base_twist(nu: &DVector<f64>) -> Twist {
    Twist::new(nu.fixed_rows::<3>(0).into_owned(), nu.fixed_rows::<3>(3).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrusterFrame {
    pub link: usize,
    /// Application point `ᴬo_i`.
    pub position: Vec3,
    /// Unit thrust direction `ᴬı_i`.
    pub direction: Vec3,
}

/// Result of forward kinematics.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub link_poses: Vec<Pose>,
    pub thrusters: Vec<ThrusterFrame>,
    /// Link centers of mass in inertial coordinates.
    pub link_coms: Vec<Vec3>,
    /// Joint motion subspaces, Plücker at the inertial origin.
    joint_axes: Vec<SpatialVec>,
    /// Link spatial inertias at the inertial origin.
    link_inertias: Vec<Matrix6<f64>>,
    base_map: SMatrix<f64, 6, 6>,
}

impl Kinematics {
    /// Spatial velocity of the base from `(ȯ_B, ω_B)`.
    fn base_velocity(&self, nu: &DVector<f64>) -> SpatialVec {
        self.base_map * nu.fixed_rows::<6>(0)
    }

    /// Joint axis of joint `j` in inertial coordinates.
    pub fn joint_axis(&self, j: usize) -> Vec3 {
        self.joint_axes[j].fixed_rows::<3>(0).into_owned()
    }
}

fn cross_motion(v: &SpatialVec, m: &SpatialVec) -> SpatialVec {
    let w = v.fixed_rows::<3>(0);
    let u = v.fixed_rows::<3>(3);
    let mw = m.fixed_rows::<3>(0);
    let mu = m.fixed_rows::<3>(3);
    let a = w.cross(&mw);
    let b = w.cross(&mu) + u.cross(&mw);
    SpatialVec::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

fn cross_force(v: &SpatialVec, f: &SpatialVec) -> SpatialVec {
    let w = v.fixed_rows::<3>(0);
    let u = v.fixed_rows::<3>(3);
    let n = f.fixed_rows::<3>(0);
    let fl = f.fixed_rows::<3>(3);
    let a = w.cross(&n) + u.cross(&fl);
    let b = w.cross(&fl);
    SpatialVec::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// Spatial inertia at the origin of a body with mass `m`, CoM `c` and
/// rotational inertia `ic` about the CoM, all in inertial coordinates.
fn spatial_inertia(m: f64, c: &Vec3, ic: &Mat3) -> Matrix6<f64> {
    let sc = skew(c);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic + sc * sc.transpose() * m));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(sc * m));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(sc.transpose() * m));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Mat3::identity() * m));
    out
}

/// Pose of every link, thruster frames and cached spatial data.
pub fn forward_kinematics(model: &RobotModel, q: &Configuration) -> Kinematics {
    let nl = model.links.len();
    let mut poses = vec![Pose::identity(); nl];
    poses[model.base] = Pose {
        translation: q.base_position,
        rotation: q.base_rotation,
    };
    let mut joint_axes = vec![SpatialVec::zeros(); model.dof()];
    for &j in model.traversal() {
        let joint = &model.joints[j];
        let frame = poses[joint.parent].compose(&joint.origin);
        let axis = frame.rotation.apply(&joint.axis);
        let point = frame.translation;
        let lin = point.cross(&axis);
        joint_axes[j] = SpatialVec::new(axis.x, axis.y, axis.z, lin.x, lin.y, lin.z);
        let motion = Rotation::from_axis_angle(&joint.axis, q.joints[j]);
        poses[joint.child] = Pose {
            translation: frame.translation,
            rotation: Rotation::from_matrix_unchecked(frame.rotation.matrix() * motion.matrix()),
        };
    }
    let mut link_coms = Vec::with_capacity(nl);
    let mut link_inertias = Vec::with_capacity(nl);
    for (link, pose) in model.links.iter().zip(&poses) {
        let c = pose.transform_point(&link.inertial.com);
        let r = pose.rotation.matrix();
        let ic = r * link.inertial.inertia * r.transpose();
        link_inertias.push(spatial_inertia(link.inertial.mass, &c, &ic));
        link_coms.push(c);
    }
    let thrusters = model
        .thrusters
        .iter()
        .map(|t| {
            let pose = &poses[t.link];
            ThrusterFrame {
                link: t.link,
                position: pose.transform_point(&t.position),
                direction: pose.rotation.apply(&t.direction),
            }
        })
        .collect();
    let mut base_map = SMatrix::<f64, 6, 6>::zeros();
    base_map.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    base_map.fixed_view_mut::<3, 3>(3, 0).copy_from(&Mat3::identity());
    base_map.fixed_view_mut::<3, 3>(3, 3).copy_from(&skew(&q.base_position));
    Kinematics {
        link_poses: poses,
        thrusters,
        link_coms,
        joint_axes,
        link_inertias,
        base_map,
    }
}

/// Composite inertia of the subtree rooted at each link.
fn composite_inertias(model: &RobotModel, kin: &Kinematics) -> Vec<Matrix6<f64>> {
    let mut ic = kin.link_inertias.clone();
    for &j in model.traversal().iter().rev() {
        let joint = &model.joints[j];
        let child = ic[joint.child];
        ic[joint.parent] += child;
    }
    ic
}

/// Spatial (Plücker, origin) Jacobian of a link: `V_link = J ν`.
fn spatial_link_jacobian(model: &RobotModel, kin: &Kinematics, link: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(6, model.nv());
    jac.view_mut((0, 0), (6, 6)).copy_from(&kin.base_map);
    for &j in model.chain(link) {
        jac.view_mut((0, 6 + j), (6, 1)).copy_from(&kin.joint_axes[j]);
    }
    jac
}

/// Composite rigid-body algorithm for `M(q)`.
pub fn mass_matrix(model: &RobotModel, q: &Configuration) -> DMatrix<f64> {
    let kin = forward_kinematics(model, q);
    mass_matrix_from(model, &kin)
}

fn mass_matrix_from(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let nv = model.nv();
    let ic = composite_inertias(model, kin);
    let mut m = DMatrix::zeros(nv, nv);
    let base_block = kin.base_map.transpose() * ic[model.base] * kin.base_map;
    m.view_mut((0, 0), (6, 6)).copy_from(&base_block);
    for (j, joint) in model.joints.iter().enumerate() {
        let force = ic[joint.child] * kin.joint_axes[j];
        let coupling = kin.base_map.transpose() * force;
        m.view_mut((0, 6 + j), (6, 1)).copy_from(&coupling);
        m.view_mut((6 + j, 0), (1, 6)).copy_from(&coupling.transpose());
        for &k in model.chain(joint.child) {
            let v = kin.joint_axes[k].dot(&force);
            m[(6 + k, 6 + j)] = v;
            m[(6 + j, 6 + k)] = v;
        }
    }
    m
}

/// Recursive Newton–Euler inverse dynamics: `M ν̇ + C ν + G`.
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &Configuration,
    nu: &DVector<f64>,
    nu_dot: &DVector<f64>,
) -> DVector<f64> {
    let kin = forward_kinematics(model, q);
    rnea(model, &kin, nu, nu_dot, model.gravity)
}

fn rnea(model: &RobotModel, kin: &Kinematics, nu: &DVector<f64>, nu_dot: &DVector<f64>, gravity: f64) -> DVector<f64> {
    let nl = model.links.len();
    let mut vel = vec![SpatialVec::zeros(); nl];
    let mut acc = vec![SpatialVec::zeros(); nl];
    let od = nu.fixed_rows::<3>(0).into_owned();
    let w = nu.fixed_rows::<3>(3).into_owned();
    let sdot_base = od.cross(&w);
    vel[model.base] = kin.base_velocity(nu);
    // uniform gravity enters as an upward acceleration of the base
    acc[model.base] = kin.base_map * nu_dot.fixed_rows::<6>(0)
        + SpatialVec::new(0.0, 0.0, 0.0, sdot_base.x, sdot_base.y, sdot_base.z + gravity);
    for &j in model.traversal() {
        let joint = &model.joints[j];
        let s = &kin.joint_axes[j];
        let v = vel[joint.parent] + s * nu[6 + j];
        acc[joint.child] = acc[joint.parent] + s * nu_dot[6 + j] + cross_motion(&v, s) * nu[6 + j];
        vel[joint.child] = v;
    }
    let mut force: Vec<SpatialVec> = (0..nl)
        .map(|i| {
            let inertia = &kin.link_inertias[i];
            inertia * acc[i] + cross_force(&vel[i], &(inertia * vel[i]))
        })
        .collect();
    let mut out = DVector::zeros(model.nv());
    for &j in model.traversal().iter().rev() {
        let joint = &model.joints[j];
        out[6 + j] = kin.joint_axes[j].dot(&force[joint.child]);
        let child = force[joint.child];
        force[joint.parent] += child;
    }
    out.fixed_rows_mut::<6>(0)
        .copy_from(&(kin.base_map.transpose() * force[model.base]));
    out
}

/// `b = C(q,ν)ν + G(q)`.
pub fn bias_forces(model: &RobotModel, q: &Configuration, nu: &DVector<f64>) -> DVector<f64> {
    inverse_dynamics(model, q, nu, &DVector::zeros(model.nv()))
}

/// `G(q)`.
pub fn gravity_forces(model: &RobotModel, q: &Configuration) -> DVector<f64> {
    let zero = DVector::zeros(model.nv());
    inverse_dynamics(model, q, &zero, &zero)
}

/// Frames addressable by [`frame_jacobian`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    Base,
    /// Origin of a link frame.
    Link(usize),
    /// A point fixed on a link, given in link coordinates.
    LinkPoint { link: usize, point: Vec3 },
    Thruster(usize),
}

impl Frame {
    /// Resolves a link or thruster name.
    pub fn by_name(model: &RobotModel, name: &str) -> Result<Frame, DynamicsError> {
        if let Some(i) = model.link_index(name) {
            return Ok(if i == model.base { Frame::Base } else { Frame::Link(i) });
        }
        model
            .thrusters
            .iter()
            .position(|t| t.name == name)
            .map(Frame::Thruster)
            .ok_or_else(|| DynamicsError::UnknownFrame(name.to_string()))
    }

    fn resolve(&self, model: &RobotModel, kin: &Kinematics) -> (usize, Vec3) {
        match *self {
            Frame::Base => (model.base, kin.link_poses[model.base].translation),
            Frame::Link(l) => (l, kin.link_poses[l].translation),
            Frame::LinkPoint { link, point } => (link, kin.link_poses[link].transform_point(&point)),
            Frame::Thruster(i) => (kin.thrusters[i].link, kin.thrusters[i].position),
        }
    }
}

/// 6×(n+6) Jacobian mapping `ν` to (linear velocity of the frame origin;
/// angular velocity), inertial coordinates.
pub fn frame_jacobian(model: &RobotModel, q: &Configuration, frame: Frame) -> DMatrix<f64> {
    let kin = forward_kinematics(model, q);
    frame_jacobian_from(model, &kin, frame)
}

/// [`frame_jacobian`] addressed by link or thruster name.
pub fn frame_jacobian_by_name(model: &RobotModel, q: &Configuration, name: &str) -> Result<DMatrix<f64>, DynamicsError> {
    let frame = Frame::by_name(model, name)?;
    Ok(frame_jacobian(model, q, frame))
}

fn frame_jacobian_from(model: &RobotModel, kin: &Kinematics, frame: Frame) -> DMatrix<f64> {
    let (link, point) = frame.resolve(model, kin);
    let spatial = spatial_link_jacobian(model, kin, link);
    let ang = spatial.rows(0, 3);
    let lin = spatial.rows(3, 3) - skew(&point) * ang;
    let mut out = DMatrix::zeros(6, model.nv());
    out.rows_mut(0, 3).copy_from(&lin);
    out.rows_mut(3, 3).copy_from(&ang);
    out
}

/// Center of mass and total mass.
pub fn center_of_mass(model: &RobotModel, q: &Configuration) -> Vec3 {
    let kin = forward_kinematics(model, q);
    com_from(model, &kin)
}

fn com_from(model: &RobotModel, kin: &Kinematics) -> Vec3 {
    let mut sum = Vec3::zeros();
    for (link, c) in model.links.iter().zip(&kin.link_coms) {
        sum += c * link.inertial.mass;
    }
    sum / model.total_mass()
}

/// Maps an origin-referred spatial force `(n; f)` to centroidal `(f; n − c×f)`.
fn to_centroidal(c: &Vec3) -> Matrix6<f64> {
    let mut p = Matrix6::zeros();
    p.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    p.fixed_view_mut::<3, 3>(3, 0).copy_from(&Mat3::identity());
    p.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-skew(c)));
    p
}

fn cmm_from(model: &RobotModel, kin: &Kinematics, ic: &[Matrix6<f64>], c: &Vec3) -> DMatrix<f64> {
    let p = to_centroidal(c);
    let mut jh = DMatrix::zeros(6, model.nv());
    jh.view_mut((0, 0), (6, 6)).copy_from(&(p * ic[model.base] * kin.base_map));
    for (j, joint) in model.joints.iter().enumerate() {
        let col = p * (ic[joint.child] * kin.joint_axes[j]);
        jh.view_mut((0, 6 + j), (6, 1)).copy_from(&col);
    }
    jh
}

/// Centroidal momentum matrix `J_h`: `h = (h^l; h^ω) = J_h ν`, taken at the
/// CoM with inertial orientation.
pub fn centroidal_momentum_matrix(model: &RobotModel, q: &Configuration) -> DMatrix<f64> {
    let kin = forward_kinematics(model, q);
    let ic = composite_inertias(model, &kin);
    cmm_from(model, &kin, &ic, &com_from(model, &kin))
}

/// `h = J_h ν`.
pub fn momentum(model: &RobotModel, q: &Configuration, nu: &DVector<f64>) -> Vector6<f64> {
    let jh = centroidal_momentum_matrix(model, q);
    let h = jh * nu;
    Vector6::from_iterator(h.iter().copied())
}

fn locked_inertia_from(ic_base: &Matrix6<f64>, mass: f64, c: &Vec3) -> Mat3 {
    let sc = skew(c);
    let about_origin: Mat3 = ic_base.fixed_view::<3, 3>(0, 0).into_owned();
    let out = about_origin - sc * sc.transpose() * mass;
    (out + out.transpose()) * 0.5
}

/// Rotational inertia of the whole robot with joints locked, about the CoM.
pub fn locked_inertia(model: &RobotModel, q: &Configuration) -> Mat3 {
    let kin = forward_kinematics(model, q);
    let ic = composite_inertias(model, &kin);
    locked_inertia_from(&ic[model.base], model.total_mass(), &com_from(model, &kin))
}

fn thrust_map_from(kin: &Kinematics, c: &Vec3) -> Matrix6x4<f64> {
    let mut a = Matrix6x4::zeros();
    for (i, t) in kin.thrusters.iter().enumerate() {
        let r = t.position - c;
        let m = r.cross(&t.direction);
        a.fixed_view_mut::<3, 1>(0, i).copy_from(&t.direction);
        a.fixed_view_mut::<3, 1>(3, i).copy_from(&m);
    }
    a
}

/// `A(q)`: column `i` is `(ı_i; r_i × ı_i)` with `r_i = o_i − c`.
pub fn thrust_wrench_map(model: &RobotModel, q: &Configuration) -> Matrix6x4<f64> {
    let kin = forward_kinematics(model, q);
    thrust_map_from(&kin, &com_from(model, &kin))
}

fn thrust_force_from(model: &RobotModel, kin: &Kinematics, thrust: &Vector4<f64>) -> DVector<f64> {
    let mut f = DVector::zeros(model.nv());
    for (i, t) in kin.thrusters.iter().enumerate() {
        let force = t.direction * thrust[i];
        let moment = t.position.cross(&force);
        let wrench = SpatialVec::new(moment.x, moment.y, moment.z, force.x, force.y, force.z);
        f += spatial_link_jacobian(model, kin, t.link).transpose() * wrench;
    }
    f
}

/// `f(q,T) = Σ J_iᵀ ı_i T_i`.
pub fn thrust_generalized_force(model: &RobotModel, q: &Configuration, thrust: &Vector4<f64>) -> DVector<f64> {
    let kin = forward_kinematics(model, q);
    thrust_force_from(model, &kin, thrust)
}

/// `ν̇ = M⁻¹((0; τ) + f(q,T) − b)`.
pub fn forward_dynamics(
    model: &RobotModel,
    q: &Configuration,
    nu: &DVector<f64>,
    tau: &DVector<f64>,
    thrust: &Vector4<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    let n = model.dof();
    if tau.len() != n {
        return Err(DynamicsError::Dimension { expected: n, got: tau.len() });
    }
    let kin = forward_kinematics(model, q);
    let m = mass_matrix_from(model, &kin);
    let b = rnea(model, &kin, nu, &DVector::zeros(model.nv()), model.gravity);
    let mut rhs = thrust_force_from(model, &kin, thrust) - b;
    let mut joint_rows = rhs.rows_mut(6, n);
    joint_rows += tau;
    let chol = m.cholesky().ok_or(DynamicsError::MassMatrixNotPd)?;
    Ok(chol.solve(&rhs))
}

/// `½ νᵀ M ν`.
pub fn kinetic_energy(model: &RobotModel, q: &Configuration, nu: &DVector<f64>) -> f64 {
    0.5 * nu.dot(&(mass_matrix(model, q) * nu))
}

/// `m g c_z`.
pub fn potential_energy(model: &RobotModel, q: &Configuration) -> f64 {
    model.total_mass() * model.gravity * center_of_mass(model, q).z
}

/// Every model-derived quantity the controller needs at one state.
#[derive(Debug, Clone)]
pub struct DynamicsWorkspace {
    pub kinematics: Kinematics,
    pub mass_matrix: DMatrix<f64>,
    /// `C(q,ν)ν + G(q)`.
    pub bias: DVector<f64>,
    pub cmm: DMatrix<f64>,
    pub com: Vec3,
    pub mass: f64,
    pub gravity: f64,
    pub locked_inertia: Mat3,
    pub thrust_map: Matrix6x4<f64>,
    /// Mixed 6-D Jacobians of the thruster frames.
    pub thruster_jacobians: Vec<DMatrix<f64>>,
    /// Joint-only generalized force per unit thrust, columns of `∂f/∂T`.
    pub thrust_force_map: DMatrix<f64>,
}

impl DynamicsWorkspace {
    pub fn compute(model: &RobotModel, q: &Configuration, nu: &DVector<f64>) -> Self {
        let kin = forward_kinematics(model, q);
        let mass_matrix = mass_matrix_from(model, &kin);
        let bias = rnea(model, &kin, nu, &DVector::zeros(model.nv()), model.gravity);
        let ic = composite_inertias(model, &kin);
        let com = com_from(model, &kin);
        let mass = model.total_mass();
        let cmm = cmm_from(model, &kin, &ic, &com);
        let locked_inertia = locked_inertia_from(&ic[model.base], mass, &com);
        let thrust_map = thrust_map_from(&kin, &com);
        let thruster_jacobians = (0..kin.thrusters.len())
            .map(|i| frame_jacobian_from(model, &kin, Frame::Thruster(i)))
            .collect();
        let mut thrust_force_map = DMatrix::zeros(model.nv(), kin.thrusters.len());
        for i in 0..kin.thrusters.len() {
            let unit = Vector4::from_fn(|k, _| if k == i { 1.0 } else { 0.0 });
            thrust_force_map.set_column(i, &thrust_force_from(model, &kin, &unit));
        }
        DynamicsWorkspace {
            kinematics: kin,
            mass_matrix,
            bias,
            cmm,
            com,
            mass,
            gravity: model.gravity,
            locked_inertia,
            thrust_map,
            thruster_jacobians,
            thrust_force_map,
        }
    }

    /// Same state seen through a model whose masses and inertias are all
    /// multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.mass_matrix *= factor;
        out.bias *= factor;
        out.cmm *= factor;
        out.mass *= factor;
        out.locked_inertia *= factor;
        out
    }

    pub fn momentum(&self, nu: &DVector<f64>) -> Vector6<f64> {
        Vector6::from_iterator((&self.cmm * nu).iter().copied())
    }

    pub fn thrust_generalized_force(&self, thrust: &Vector4<f64>) -> DVector<f64> {
        &self.thrust_force_map * thrust
    }

    /// Thrust directions as a 3×4 matrix.
    pub fn thrust_directions(&self) -> Matrix3x4<f64> {
        Matrix3x4::from_fn(|r, c| self.kinematics.thrusters[c].direction[r])
    }

    /// `J_h^b`, the base block of the CMM.
    pub fn cmm_base(&self) -> Matrix6<f64> {
        Matrix6::from_iterator(self.cmm.columns(0, 6).iter().copied())
    }

    /// `J_h^s`, the joint block of the CMM.
    pub fn cmm_joints(&self) -> DMatrix<f64> {
        let n = self.cmm.ncols() - 6;
        self.cmm.columns(6, n).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{surrogate_humanoid, two_link_chain, Inertial, Link, Thruster};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> (Configuration, DVector<f64>) {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let q = Configuration {
            base_position: Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            base_rotation: Rotation::from_axis_angle(&axis, rng.gen_range(-3.0..3.0)),
            joints: DVector::from_fn(model.dof(), |_, _| rng.gen_range(-1.5..1.5)),
        };
        let nu = DVector::from_fn(model.nv(), |_, _| rng.gen_range(-1.0..1.0));
        (q, nu)
    }

    fn single_body() -> RobotModel {
        let link = Link {
            name: "body".into(),
            inertial: Inertial {
                mass: 3.0,
                com: Vec3::new(0.1, -0.2, 0.05),
                inertia: Mat3::new(0.3, 0.01, 0.0, 0.01, 0.2, 0.02, 0.0, 0.02, 0.1),
            },
        };
        let thrusters = (0..4)
            .map(|i| Thruster {
                name: format!("t{i}"),
                link: 0,
                position: Vec3::new(i as f64 * 0.1, 0.0, 0.0),
                direction: Vec3::z(),
            })
            .collect();
        RobotModel::new("body", vec![link], vec![], 0, thrusters).unwrap()
    }

    #[test]
    fn single_body_mass_matrix_is_its_spatial_inertia() {
        let model = single_body();
        let rot = Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.4);
        let q = Configuration {
            base_position: Vec3::new(1.0, -1.0, 2.0),
            base_rotation: rot,
            joints: DVector::zeros(0),
        };
        let m = mass_matrix(&model, &q);
        // Hand-built (linear, angular) inertia about the base origin
        let r = rot.matrix();
        let c_rel = r * Vec3::new(0.1, -0.2, 0.05);
        let ic = r * model.links[0].inertial.inertia * r.transpose();
        let s = skew(&c_rel);
        let mut expected = DMatrix::zeros(6, 6);
        expected.view_mut((0, 0), (3, 3)).copy_from(&(Mat3::identity() * 3.0));
        expected.view_mut((0, 3), (3, 3)).copy_from(&(-s * 3.0));
        expected.view_mut((3, 0), (3, 3)).copy_from(&(s * 3.0));
        expected.view_mut((3, 3), (3, 3)).copy_from(&(ic - s * s * 3.0));
        assert!((m - expected).amax() < 1e-12);
    }

    #[test]
    fn two_link_mass_matrix_at_zero() {
        // Hand derivation: base box m=2 at origin, rod m=1 with CoM at (0.5,0,-0.5),
        // hinge about y through (0.5,0,0). Rod inertia about its CoM: diag(1.01/12, 1.01/12, 0.02/12).
        let model = two_link_chain();
        let q = Configuration::neutral(&model);
        let m = mass_matrix(&model, &q);
        let (ib_x, ib_yz) = (2.0 * 0.02 / 12.0, 2.0 * 1.01 / 12.0);
        let (ir_xy, ir_z) = (1.01 / 12.0, 0.02 / 12.0);
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(7, 7, &[
            3.0, 0.0, 0.0,  0.0, -0.5, 0.0,  -0.5,
            0.0, 3.0, 0.0,  0.5,  0.0, 0.5,   0.0,
            0.0, 0.0, 3.0,  0.0, -0.5, 0.0,   0.0,
            0.0, 0.5, 0.0,  ib_x + ir_xy + 0.25, 0.0, 0.25, 0.0,
            -0.5, 0.0, -0.5, 0.0, ib_yz + ir_xy + 0.5, 0.0, ir_xy + 0.25,
            0.0, 0.5, 0.0,  0.25, 0.0, ib_yz + ir_z + 0.25, 0.0,
            -0.5, 0.0, 0.0, 0.0, ir_xy + 0.25, 0.0, ir_xy + 0.25,
        ]);
        assert!((&m - &expected).amax() < 1e-12, "{m}\n{expected}");
    }

    #[test]
    fn crba_matches_rnea_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = surrogate_humanoid();
        for _ in 0..20 {
            let (q, _) = random_state(&model, &mut rng);
            let m = mass_matrix(&model, &q);
            let zero = DVector::zeros(model.nv());
            let g = inverse_dynamics(&model, &q, &zero, &zero);
            for j in 0..model.nv() {
                let mut e = DVector::zeros(model.nv());
                e[j] = 1.0;
                let col = inverse_dynamics(&model, &q, &zero, &e) - &g;
                assert!((col - m.column(j)).amax() < 1e-9);
            }
            assert!((&m - m.transpose()).amax() < 1e-9);
            assert!(m.clone().cholesky().is_some());
        }
    }

    #[test]
    fn static_bias_is_gravity_and_supports_weight() {
        let model = surrogate_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, _) = random_state(&model, &mut rng);
        let b = bias_forces(&model, &q, &DVector::zeros(model.nv()));
        let g = gravity_forces(&model, &q);
        assert_eq!(b, g);
        let mg = model.total_mass() * model.gravity;
        assert!((b[2] - mg).abs() < 1e-10 && b[0].abs() < 1e-10 && b[1].abs() < 1e-10);
        let zero_g = model.clone().with_gravity(0.0);
        assert!(bias_forces(&zero_g, &q, &DVector::zeros(model.nv())).amax() < 1e-12);
    }

    #[test]
    fn base_frame_jacobian_is_identity_block() {
        let model = surrogate_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, _) = random_state(&model, &mut rng);
        let j = frame_jacobian(&model, &q, Frame::Base);
        assert!((j.columns(0, 6) - DMatrix::<f64>::identity(6, 6)).amax() < 1e-12);
        assert_eq!(j.columns(6, model.dof()).amax(), 0.0);
        assert_eq!(frame_jacobian_by_name(&model, &q, "root_link").unwrap(), j);
        assert!(matches!(
            frame_jacobian_by_name(&model, &q, "nope"),
            Err(DynamicsError::UnknownFrame(_))
        ));
    }

    #[test]
    fn zero_velocity_gives_zero_momentum_and_twist() {
        let model = surrogate_humanoid();
        let q = Configuration::neutral(&model);
        let zero = DVector::zeros(model.nv());
        assert_eq!(momentum(&model, &q, &zero), Vector6::zeros());
        let j = frame_jacobian(&model, &q, Frame::Thruster(0));
        assert_eq!(j * zero, DVector::zeros(6));
    }

    #[test]
    fn pure_translation_momentum() {
        let model = surrogate_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, _) = random_state(&model, &mut rng);
        let mut nu = DVector::zeros(model.nv());
        nu[0] = 0.3;
        nu[1] = -1.2;
        nu[2] = 0.7;
        let h = momentum(&model, &q, &nu);
        let m = model.total_mass();
        assert!((h.fixed_rows::<3>(0) - Vec3::new(0.3, -1.2, 0.7) * m).amax() < 1e-10);
        assert!(h.fixed_rows::<3>(3).amax() < 1e-10);
    }

    #[test]
    fn locked_inertia_of_single_body() {
        let model = single_body();
        let rot = Rotation::from_axis_angle(&Vec3::new(0.0, 1.0, 1.0), 0.8);
        let q = Configuration {
            base_position: Vec3::new(0.5, 0.0, 0.0),
            base_rotation: rot,
            joints: DVector::zeros(0),
        };
        let expected = rot.matrix() * model.links[0].inertial.inertia * rot.matrix().transpose();
        assert!((locked_inertia(&model, &q) - expected).amax() < 1e-12);
    }

    #[test]
    fn locked_inertia_maps_rotation_about_com() {
        let model = surrogate_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (q, _) = random_state(&model, &mut rng);
            let c = center_of_mass(&model, &q);
            let omega = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            // base rotating about the CoM: ȯ_B = ω × (o_B − c)
            let mut nu = DVector::zeros(model.nv());
            let od = omega.cross(&(q.base_position - c));
            nu.fixed_rows_mut::<3>(0).copy_from(&od);
            nu.fixed_rows_mut::<3>(3).copy_from(&omega);
            let h = momentum(&model, &q, &nu);
            let ibar = locked_inertia(&model, &q);
            assert!((h.fixed_rows::<3>(3) - ibar * omega).amax() < 1e-9);
            assert!(h.fixed_rows::<3>(0).amax() < 1e-9);
            assert!((ibar - ibar.transpose()).amax() < 1e-12);
            assert!(nalgebra::SymmetricEigen::new(ibar).eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn zero_thrust_gives_zero_force() {
        let model = surrogate_humanoid();
        let q = Configuration::neutral(&model);
        let f = thrust_generalized_force(&model, &q, &Vector4::zeros());
        assert_eq!(f.amax(), 0.0);
    }

    #[test]
    fn vertical_equal_thrust_balances_weight_rows() {
        let model = surrogate_humanoid();
        let q = Configuration::neutral(&model);
        let a = thrust_wrench_map(&model, &q);
        let mg = model.total_mass() * model.gravity;
        let t = Vector4::repeat(mg / 4.0);
        let w = a * t;
        // all jets point up at zero joints
        assert!((w.fixed_rows::<3>(0) - Vec3::new(0.0, 0.0, mg)).amax() < 1e-10);
        // symmetric placement: net moment vanishes
        assert!(w.fixed_rows::<3>(3).amax() < 1e-10);
    }

    #[test]
    fn thrust_map_columns_are_unit_forces() {
        let model = two_link_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (q, _) = random_state(&model, &mut rng);
        let a = thrust_wrench_map(&model, &q);
        for i in 0..4 {
            assert!((a.fixed_view::<3, 1>(0, i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn workspace_matches_free_functions() {
        let model = surrogate_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, nu) = random_state(&model, &mut rng);
        let ws = DynamicsWorkspace::compute(&model, &q, &nu);
        assert!((&ws.mass_matrix - mass_matrix(&model, &q)).amax() < 1e-12);
        assert!((&ws.bias - bias_forces(&model, &q, &nu)).amax() < 1e-12);
        let t = Vector4::new(10.0, 20.0, 30.0, 40.0);
        assert!((ws.thrust_generalized_force(&t) - thrust_generalized_force(&model, &q, &t)).amax() < 1e-10);
        assert!((ws.momentum(&nu) - momentum(&model, &q, &nu)).amax() < 1e-12);
    }

    #[test]
    fn scaled_workspace_matches_scaled_model() {
        let model = surrogate_humanoid();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, nu) = random_state(&model, &mut rng);
        let a = DynamicsWorkspace::compute(&model, &q, &nu).scaled(1.1);
        let b = DynamicsWorkspace::compute(&model.scaled_inertia(1.1), &q, &nu);
        assert!((&a.mass_matrix - &b.mass_matrix).amax() < 1e-10);
        assert!((&a.bias - &b.bias).amax() < 1e-10);
        assert!((&a.cmm - &b.cmm).amax() < 1e-10);
        assert!((a.locked_inertia - b.locked_inertia).amax() < 1e-10);
        assert!((a.com - b.com).amax() < 1e-12 && (a.mass - b.mass).abs() < 1e-12);
        assert!((a.thrust_map - b.thrust_map).amax() < 1e-12);
    }
}
