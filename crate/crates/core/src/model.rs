//! Kinematic-tree robot model, a URDF-subset reader/writer and the built-in
//! 25-DoF surrogate humanoid.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DVector, SymmetricEigen};
use thiserror::Error;

use crate::spatial::{Mat3, Rotation, Vec3};

pub const THRUSTER_COUNT: usize = 4;
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Rigid transform from a child frame into its parent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: Rotation,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            translation: Vec3::zeros(),
            rotation: Rotation::identity(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose {
            translation,
            rotation: Rotation::identity(),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation.apply(&other.translation),
            rotation: self.rotation.compose(&other.rotation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inertial {
    pub mass: f64,
    /// Center of mass in link coordinates.
    pub com: Vec3,
    /// Rotational inertia about the center of mass, link axes.
    pub inertia: Mat3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub inertial: Inertial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Continuous,
}

impl JointKind {
    fn as_str(&self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: usize,
    pub child: usize,
    /// Joint frame relative to the parent link frame at zero angle.
    pub origin: Pose,
    /// Unit rotation axis in joint (child) coordinates.
    pub axis: Vec3,
}

/// Thrust actuator fixed to a link: application point and thrust direction,
/// both in link coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Thruster {
    pub name: String,
    pub link: usize,
    pub position: Vec3,
    pub direction: Vec3,
}

/// Named slices of the joint vector for the 25-DoF humanoid layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointPartition {
    pub torso: usize,
    pub left_arm: usize,
    pub right_arm: usize,
    pub left_leg: usize,
    pub right_leg: usize,
}

impl JointPartition {
    pub const HUMANOID_25: JointPartition = JointPartition {
        torso: 3,
        left_arm: 5,
        right_arm: 5,
        left_leg: 6,
        right_leg: 6,
    };

    pub fn total(&self) -> usize {
        self.torso + self.left_arm + self.right_arm + self.left_leg + self.right_leg
    }

    /// `(name, start, len)` for every part, in joint-vector order.
    pub fn parts(&self) -> [(&'static str, usize, usize); 5] {
        let sizes = [
            ("torso", self.torso),
            ("left_arm", self.left_arm),
            ("right_arm", self.right_arm),
            ("left_leg", self.left_leg),
            ("right_leg", self.right_leg),
        ];
        let mut start = 0;
        sizes.map(|(name, len)| {
            let part = (name, start, len);
            start += len;
            part
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("line {line}: malformed XML: {message}")]
    Xml { line: u32, message: String },
    #[error("line {line}: unsupported joint type '{kind}'")]
    UnsupportedJoint { line: u32, kind: String },
    #[error("line {line}: {message}")]
    Invalid { line: u32, message: String },
    #[error("line {line}: unknown link '{name}'")]
    UnknownLink { line: u32, name: String },
    #[error("expected {THRUSTER_COUNT} thrusters, found {0}")]
    ThrusterCount(usize),
    #[error("kinematic tree is disconnected or cyclic: {0}")]
    Topology(String),
    #[error("link '{link}': mass must be positive, got {mass}")]
    NonPositiveMass { link: String, mass: f64 },
    #[error("link '{0}': inertia is not symmetric positive definite")]
    InertiaNotPd(String),
    #[error("joint '{0}': axis must be a unit vector")]
    AxisNotUnit(String),
    #[error("thruster '{0}': direction must be a unit vector")]
    ThrustDirectionNotUnit(String),
}

/// Tree of `n + 1` links connected by `n` single-DoF joints, with four thrusters.
///
/// Joint `j` drives generalized coordinate `j`. The joint order is document
/// order; kinematic recursions follow [`RobotModel::traversal`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub base: usize,
    pub thrusters: Vec<Thruster>,
    pub gravity: f64,
    pub partition: Option<JointPartition>,
    // derived topology
    parent_joint: Vec<Option<usize>>,
    traversal: Vec<usize>,
    chains: Vec<Vec<usize>>,
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        links: Vec<Link>,
        joints: Vec<Joint>,
        base: usize,
        thrusters: Vec<Thruster>,
    ) -> Result<Self, ModelError> {
        let mut model = RobotModel {
            name: name.into(),
            links,
            joints,
            base,
            thrusters,
            gravity: STANDARD_GRAVITY,
            partition: None,
            parent_joint: Vec::new(),
            traversal: Vec::new(),
            chains: Vec::new(),
        };
        model.build_topology()?;
        model.validate()?;
        if model.dof() == JointPartition::HUMANOID_25.total() {
            model.partition = Some(JointPartition::HUMANOID_25);
        }
        Ok(model)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Dimension of the generalized velocity, `n + 6`.
    pub fn nv(&self) -> usize {
        self.joints.len() + 6
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.inertial.mass).sum()
    }

    /// Joint driving each link (None for the base).
    pub fn parent_joint(&self, link: usize) -> Option<usize> {
        self.parent_joint[link]
    }

    /// Joints ordered parent-before-child.
    pub fn traversal(&self) -> &[usize] {
        &self.traversal
    }

    /// Joints from the base to `link`, root first.
    pub fn chain(&self, link: usize) -> &[usize] {
        &self.chains[link]
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn with_gravity(mut self, gravity: f64) -> Self {
        self.gravity = gravity;
        self
    }

    /// Copy with every mass and inertia multiplied by `factor`. Mass matrix,
    /// bias forces and centroidal momentum matrix all scale by `factor`
    /// while the kinematics and CoM location are unchanged.
    pub fn scaled_inertia(&self, factor: f64) -> RobotModel {
        let mut m = self.clone();
        for link in &mut m.links {
            link.inertial.mass *= factor;
            link.inertial.inertia *= factor;
        }
        m
    }

    fn build_topology(&mut self) -> Result<(), ModelError> {
        let nl = self.links.len();
        if self.base >= nl {
            return Err(ModelError::Topology(format!("base index {} out of range", self.base)));
        }
        if self.joints.len() + 1 != nl {
            return Err(ModelError::Topology(format!(
                "{} links need {} joints, found {}",
                nl,
                nl.saturating_sub(1),
                self.joints.len()
            )));
        }
        let mut parent_joint = vec![None; nl];
        for (j, joint) in self.joints.iter().enumerate() {
            if joint.parent >= nl || joint.child >= nl {
                return Err(ModelError::Topology(format!("joint '{}' references a missing link", joint.name)));
            }
            if joint.child == self.base {
                return Err(ModelError::Topology(format!("joint '{}' has the base as child", joint.name)));
            }
            if parent_joint[joint.child].is_some() {
                return Err(ModelError::Topology(format!(
                    "link '{}' has more than one parent",
                    self.links[joint.child].name
                )));
            }
            parent_joint[joint.child] = Some(j);
        }
        // every joint after its parent joint
        let mut traversal = Vec::with_capacity(self.joints.len());
        let mut chains: Vec<Option<Vec<usize>>> = vec![None; nl];
        chains[self.base] = Some(Vec::new());
        let mut frontier = vec![self.base];
        while let Some(link) = frontier.pop() {
            for (j, joint) in self.joints.iter().enumerate() {
                if joint.parent == link {
                    let mut chain = chains[link].clone().unwrap_or_default();
                    chain.push(j);
                    chains[joint.child] = Some(chain);
                    traversal.push(j);
                    frontier.push(joint.child);
                }
            }
        }
        if traversal.len() != self.joints.len() {
            let orphan = chains
                .iter()
                .position(Option::is_none)
                .map(|i| self.links[i].name.clone())
                .unwrap_or_default();
            return Err(ModelError::Topology(format!("link '{orphan}' is not reachable from the base")));
        }
        self.parent_joint = parent_joint;
        self.traversal = traversal;
        self.chains = chains.into_iter().map(Option::unwrap_or_default).collect();
        Ok(())
    }

    /// Checks every physical invariant of the model.
    pub fn validate(&self) -> Result<(), ModelError> {
        for link in &self.links {
            let i = &link.inertial;
            if !(i.mass > 0.0) || !i.mass.is_finite() {
                return Err(ModelError::NonPositiveMass {
                    link: link.name.clone(),
                    mass: i.mass,
                });
            }
            if !is_spd(&i.inertia) {
                return Err(ModelError::InertiaNotPd(link.name.clone()));
            }
        }
        for joint in &self.joints {
            if (joint.axis.norm() - 1.0).abs() > 1e-10 {
                return Err(ModelError::AxisNotUnit(joint.name.clone()));
            }
        }
        if self.thrusters.len() != THRUSTER_COUNT {
            return Err(ModelError::ThrusterCount(self.thrusters.len()));
        }
        for t in &self.thrusters {
            if t.link >= self.links.len() {
                return Err(ModelError::Topology(format!("thruster '{}' on a missing link", t.name)));
            }
            if (t.direction.norm() - 1.0).abs() > 1e-10 {
                return Err(ModelError::ThrustDirectionNotUnit(t.name.clone()));
            }
        }
        Ok(())
    }

    /// Writes the model in the URDF-subset dialect read by [`parse_model`].
    pub fn to_urdf(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "<?xml version=\"1.0\"?>");
        let _ = writeln!(out, "<robot name=\"{}\">", self.name);
        for link in &self.links {
            let i = &link.inertial;
            let _ = writeln!(out, "  <link name=\"{}\">", link.name);
            let _ = writeln!(out, "    <inertial>");
            let _ = writeln!(out, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", fmt_vec(&i.com));
            let _ = writeln!(out, "      <mass value=\"{:?}\"/>", i.mass);
            let m = &i.inertia;
            let _ = writeln!(
                out,
                "      <inertia ixx=\"{:?}\" ixy=\"{:?}\" ixz=\"{:?}\" iyy=\"{:?}\" iyz=\"{:?}\" izz=\"{:?}\"/>",
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 2)]
            );
            let _ = writeln!(out, "    </inertial>");
            let _ = writeln!(out, "  </link>");
        }
        for joint in &self.joints {
            let (r, p, y) = joint.origin.rotation.to_rpy();
            let _ = writeln!(out, "  <joint name=\"{}\" type=\"{}\">", joint.name, joint.kind.as_str());
            let _ = writeln!(out, "    <parent link=\"{}\"/>", self.links[joint.parent].name);
            let _ = writeln!(out, "    <child link=\"{}\"/>", self.links[joint.child].name);
            let _ = writeln!(
                out,
                "    <origin xyz=\"{}\" rpy=\"{:?} {:?} {:?}\"/>",
                fmt_vec(&joint.origin.translation),
                r,
                p,
                y
            );
            let _ = writeln!(out, "    <axis xyz=\"{}\"/>", fmt_vec(&joint.axis));
            let _ = writeln!(out, "  </joint>");
        }
        for t in &self.thrusters {
            let _ = writeln!(
                out,
                "  <thruster name=\"{}\" link=\"{}\" xyz=\"{}\" axis=\"{}\"/>",
                t.name,
                self.links[t.link].name,
                fmt_vec(&t.position),
                fmt_vec(&t.direction)
            );
        }
        let _ = writeln!(out, "</robot>");
        out
    }
}

fn fmt_vec(v: &Vec3) -> String {
    format!("{:?} {:?} {:?}", v.x, v.y, v.z)
}

fn is_spd(m: &Mat3) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return false;
    }
    SymmetricEigen::new(*m).eigenvalues.iter().all(|&e| e > 0.0)
}

// ---------------------------------------------------------------------------
// URDF-subset parser

struct Ctx<'a> {
    doc: &'a roxmltree::Document<'a>,
}

impl Ctx<'_> {
    fn line(&self, node: roxmltree::Node) -> u32 {
        self.doc.text_pos_at(node.range().start).row
    }

    fn invalid(&self, node: roxmltree::Node, message: impl Into<String>) -> ModelError {
        ModelError::Invalid {
            line: self.line(node),
            message: message.into(),
        }
    }

    fn attr<'n>(&self, node: roxmltree::Node<'n, 'n>, name: &str) -> Result<&'n str, ModelError> {
        node.attribute(name).ok_or_else(|| {
            self.invalid(node, format!("<{}> is missing attribute '{name}'", node.tag_name().name()))
        })
    }

    fn float(&self, node: roxmltree::Node, name: &str) -> Result<f64, ModelError> {
        let text = self.attr(node, name)?;
        text.trim()
            .parse::<f64>()
            .map_err(|_| self.invalid(node, format!("attribute '{name}' is not a number: '{text}'")))
    }

    fn vec3(&self, node: roxmltree::Node, name: &str, default: Option<Vec3>) -> Result<Vec3, ModelError> {
        let Some(text) = node.attribute(name) else {
            return default.ok_or_else(|| {
                self.invalid(node, format!("<{}> is missing attribute '{name}'", node.tag_name().name()))
            });
        };
        let parts: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
        match parts {
            Ok(v) if v.len() == 3 => Ok(Vec3::new(v[0], v[1], v[2])),
            _ => Err(self.invalid(node, format!("attribute '{name}' must hold three numbers: '{text}'"))),
        }
    }

    fn child<'n>(&self, node: roxmltree::Node<'n, 'n>, tag: &str) -> Option<roxmltree::Node<'n, 'n>> {
        node.children().find(|c| c.is_element() && c.has_tag_name(tag))
    }

    fn required_child<'n>(
        &self,
        node: roxmltree::Node<'n, 'n>,
        tag: &str,
    ) -> Result<roxmltree::Node<'n, 'n>, ModelError> {
        self.child(node, tag)
            .ok_or_else(|| self.invalid(node, format!("<{}> is missing <{tag}>", node.tag_name().name())))
    }

    fn origin(&self, node: roxmltree::Node) -> Result<Pose, ModelError> {
        match self.child(node, "origin") {
            None => Ok(Pose::identity()),
            Some(o) => {
                let xyz = self.vec3(o, "xyz", Some(Vec3::zeros()))?;
                let rpy = self.vec3(o, "rpy", Some(Vec3::zeros()))?;
                Ok(Pose {
                    translation: xyz,
                    rotation: Rotation::from_rpy(rpy.x, rpy.y, rpy.z),
                })
            }
        }
    }
}

/// Reads the URDF-subset dialect documented in `docs/model-format.md`.
///
/// Supported: `<link>` with `<inertial>`, `revolute`/`continuous` joints with
/// `<origin>` and `<axis>`, and exactly four `<thruster link xyz axis/>`
/// elements. Link and joint order follow the document. The base is the
/// unique link that is not a joint child.
pub fn parse_model(text: &str) -> Result<RobotModel, ModelError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| ModelError::Xml {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let ctx = Ctx { doc: &doc };
    let root = doc.root_element();
    if !root.has_tag_name("robot") {
        return Err(ctx.invalid(root, "root element must be <robot>"));
    }
    let name = root.attribute("name").unwrap_or("robot").to_string();

    let mut links = Vec::new();
    let mut link_index: HashMap<String, usize> = HashMap::new();
    for node in root.children().filter(|n| n.is_element() && n.has_tag_name("link")) {
        let link_name = ctx.attr(node, "name")?.to_string();
        let inertial = ctx.required_child(node, "inertial")?;
        let origin = ctx.origin(inertial)?;
        let mass = ctx.float(ctx.required_child(inertial, "mass")?, "value")?;
        let inode = ctx.required_child(inertial, "inertia")?;
        let (ixx, ixy, ixz) = (ctx.float(inode, "ixx")?, ctx.float(inode, "ixy")?, ctx.float(inode, "ixz")?);
        let (iyy, iyz, izz) = (ctx.float(inode, "iyy")?, ctx.float(inode, "iyz")?, ctx.float(inode, "izz")?);
        let local = Mat3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
        let rot = origin.rotation.matrix();
        let inertia = rot * local * rot.transpose();
        if !(mass > 0.0) {
            return Err(ctx.invalid(node, format!("link '{link_name}': mass must be positive, got {mass}")));
        }
        if !is_spd(&inertia) {
            return Err(ctx.invalid(
                node,
                format!("link '{link_name}': inertia is not symmetric positive definite"),
            ));
        }
        if link_index.insert(link_name.clone(), links.len()).is_some() {
            return Err(ctx.invalid(node, format!("duplicate link name '{link_name}'")));
        }
        links.push(Link {
            name: link_name,
            inertial: Inertial {
                mass,
                com: origin.translation,
                inertia,
            },
        });
    }

    let lookup = |node: roxmltree::Node, name: &str| -> Result<usize, ModelError> {
        link_index.get(name).copied().ok_or_else(|| ModelError::UnknownLink {
            line: ctx.line(node),
            name: name.to_string(),
        })
    };

    let mut joints = Vec::new();
    for node in root.children().filter(|n| n.is_element() && n.has_tag_name("joint")) {
        let joint_name = ctx.attr(node, "name")?.to_string();
        let kind = match ctx.attr(node, "type")? {
            "revolute" => JointKind::Revolute,
            "continuous" => JointKind::Continuous,
            other => {
                return Err(ModelError::UnsupportedJoint {
                    line: ctx.line(node),
                    kind: other.to_string(),
                })
            }
        };
        let parent_node = ctx.required_child(node, "parent")?;
        let child_node = ctx.required_child(node, "child")?;
        let parent = lookup(parent_node, ctx.attr(parent_node, "link")?)?;
        let child = lookup(child_node, ctx.attr(child_node, "link")?)?;
        let origin = ctx.origin(node)?;
        let axis = match ctx.child(node, "axis") {
            Some(a) => ctx.vec3(a, "xyz", None)?,
            None => Vec3::x(),
        };
        let norm = axis.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ctx.invalid(node, format!("joint '{joint_name}': axis must be nonzero")));
        }
        joints.push(Joint {
            name: joint_name,
            kind,
            parent,
            child,
            origin,
            axis: axis / norm,
        });
    }

    let mut thrusters = Vec::new();
    for node in root.children().filter(|n| n.is_element() && n.has_tag_name("thruster")) {
        let link = lookup(node, ctx.attr(node, "link")?)?;
        let position = ctx.vec3(node, "xyz", Some(Vec3::zeros()))?;
        let direction = ctx.vec3(node, "axis", None)?;
        let norm = direction.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ctx.invalid(node, "thruster axis must be nonzero"));
        }
        let thruster_name = node
            .attribute("name")
            .map(str::to_string)
            .unwrap_or_else(|| format!("thruster{}", thrusters.len() + 1));
        thrusters.push(Thruster {
            name: thruster_name,
            link,
            position,
            direction: direction / norm,
        });
    }
    if thrusters.len() != THRUSTER_COUNT {
        return Err(ModelError::ThrusterCount(thrusters.len()));
    }

    let mut is_child = vec![false; links.len()];
    for j in &joints {
        is_child[j.child] = true;
    }
    let roots: Vec<usize> = (0..links.len()).filter(|&i| !is_child[i]).collect();
    let base = match roots.as_slice() {
        [b] => *b,
        [] => return Err(ModelError::Topology("no root link (cycle)".into())),
        many => {
            return Err(ModelError::Topology(format!(
                "{} root links: {}",
                many.len(),
                many.iter().map(|&i| links[i].name.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    RobotModel::new(name, links, joints, base, thrusters)
}

// ---------------------------------------------------------------------------
// Fixtures

fn box_inertia(mass: f64, size: Vec3) -> Mat3 {
    let (x2, y2, z2) = (size.x * size.x, size.y * size.y, size.z * size.z);
    Mat3::from_diagonal(&Vec3::new(y2 + z2, x2 + z2, x2 + y2)) * (mass / 12.0)
}

fn rod_link(name: &str, mass: f64, length: f64, width: f64) -> Link {
    // segment hanging along -z from the joint
    Link {
        name: name.to_string(),
        inertial: Inertial {
            mass,
            com: Vec3::new(0.0, 0.0, -0.5 * length),
            inertia: box_inertia(mass, Vec3::new(width, width, length)),
        },
    }
}

fn small_link(name: &str, mass: f64) -> Link {
    Link {
        name: name.to_string(),
        inertial: Inertial {
            mass,
            com: Vec3::zeros(),
            inertia: box_inertia(mass, Vec3::new(0.06, 0.06, 0.06)),
        },
    }
}

struct TreeBuilder {
    links: Vec<Link>,
    joints: Vec<Joint>,
}

impl TreeBuilder {
    fn add(&mut self, joint: &str, parent: usize, offset: Vec3, axis: Vec3, link: Link) -> usize {
        let child = self.links.len();
        self.links.push(link);
        self.joints.push(Joint {
            name: joint.to_string(),
            kind: JointKind::Revolute,
            parent,
            child,
            origin: Pose::from_translation(offset),
            axis: axis.normalize(),
        });
        child
    }
}

/// Length of the surrogate's upper arm, forearm and hand segment.
const UPPER_ARM: f64 = 0.25;
const FOREARM: f64 = 0.22;
const HAND: f64 = 0.08;
const THIGH: f64 = 0.30;
const SHIN: f64 = 0.30;
const FOOT: f64 = 0.06;

/// 25-DoF, 30 kg humanoid standing in for the real platform.
///
/// Joint layout: torso (pitch, roll, yaw), each arm (shoulder pitch, roll,
/// yaw, elbow, wrist), each leg (hip pitch, roll, yaw, knee, ankle pitch,
/// ankle roll). Thrusters sit at the hand and foot tips and push along
/// the limb towards the body, so with zero joints every thrust points up.
/// Shoulder roll axes are mirrored so that a positive angle opens both arms.
pub fn surrogate_humanoid() -> RobotModel {
    let mut b = TreeBuilder {
        links: vec![Link {
            name: "root_link".into(),
            inertial: Inertial {
                mass: 5.0,
                com: Vec3::new(0.0, 0.0, 0.0),
                inertia: box_inertia(5.0, Vec3::new(0.15, 0.25, 0.12)),
            },
        }],
        joints: Vec::new(),
    };
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());

    let t1 = b.add("torso_pitch", 0, Vec3::new(0.0, 0.0, 0.06), y, small_link("torso_1", 0.5));
    let t2 = b.add("torso_roll", t1, Vec3::zeros(), x, small_link("torso_2", 0.5));
    let chest = b.add(
        "torso_yaw",
        t2,
        Vec3::zeros(),
        z,
        Link {
            name: "chest".into(),
            inertial: Inertial {
                mass: 7.0,
                com: Vec3::new(0.0, 0.0, 0.16),
                inertia: box_inertia(7.0, Vec3::new(0.15, 0.3, 0.3)),
            },
        },
    );

    for (side, sign) in [("l", 1.0), ("r", -1.0)] {
        let roll_axis = x * sign;
        let a1 = b.add(
            &format!("{side}_shoulder_pitch"),
            chest,
            Vec3::new(0.0, 0.2 * sign, 0.28),
            y,
            small_link(&format!("{side}_shoulder_1"), 0.3),
        );
        let a2 = b.add(
            &format!("{side}_shoulder_roll"),
            a1,
            Vec3::zeros(),
            roll_axis,
            small_link(&format!("{side}_shoulder_2"), 0.3),
        );
        let a3 = b.add(
            &format!("{side}_shoulder_yaw"),
            a2,
            Vec3::zeros(),
            z,
            rod_link(&format!("{side}_upper_arm"), 1.0, UPPER_ARM, 0.06),
        );
        let a4 = b.add(
            &format!("{side}_elbow"),
            a3,
            Vec3::new(0.0, 0.0, -UPPER_ARM),
            y,
            rod_link(&format!("{side}_forearm"), 0.8, FOREARM, 0.05),
        );
        b.add(
            &format!("{side}_wrist"),
            a4,
            Vec3::new(0.0, 0.0, -FOREARM),
            z,
            rod_link(&format!("{side}_hand"), 1.1, HAND, 0.08),
        );
    }

    for (side, sign) in [("l", 1.0), ("r", -1.0)] {
        let roll_axis = x * sign;
        let l1 = b.add(
            &format!("{side}_hip_pitch"),
            0,
            Vec3::new(0.0, 0.09 * sign, -0.08),
            y,
            small_link(&format!("{side}_hip_1"), 0.3),
        );
        let l2 = b.add(
            &format!("{side}_hip_roll"),
            l1,
            Vec3::zeros(),
            roll_axis,
            small_link(&format!("{side}_hip_2"), 0.3),
        );
        let l3 = b.add(
            &format!("{side}_hip_yaw"),
            l2,
            Vec3::zeros(),
            z,
            rod_link(&format!("{side}_thigh"), 2.0, THIGH, 0.1),
        );
        let l4 = b.add(
            &format!("{side}_knee"),
            l3,
            Vec3::new(0.0, 0.0, -THIGH),
            y,
            rod_link(&format!("{side}_shin"), 1.2, SHIN, 0.08),
        );
        let l5 = b.add(
            &format!("{side}_ankle_pitch"),
            l4,
            Vec3::new(0.0, 0.0, -SHIN),
            y,
            small_link(&format!("{side}_ankle"), 0.2),
        );
        b.add(
            &format!("{side}_ankle_roll"),
            l5,
            Vec3::zeros(),
            roll_axis,
            rod_link(&format!("{side}_foot"), 1.0, FOOT, 0.1),
        );
    }

    let link = |name: &str| b.links.iter().position(|l| l.name == name).unwrap();
    let thrusters = vec![
        Thruster {
            name: "l_hand_jet".into(),
            link: link("l_hand"),
            position: Vec3::new(0.0, 0.0, -HAND),
            direction: z,
        },
        Thruster {
            name: "r_hand_jet".into(),
            link: link("r_hand"),
            position: Vec3::new(0.0, 0.0, -HAND),
            direction: z,
        },
        Thruster {
            name: "l_foot_jet".into(),
            link: link("l_foot"),
            position: Vec3::new(0.0, 0.0, -FOOT),
            direction: z,
        },
        Thruster {
            name: "r_foot_jet".into(),
            link: link("r_foot"),
            position: Vec3::new(0.0, 0.0, -FOOT),
            direction: z,
        },
    ];
    RobotModel::new("surrogate_humanoid", b.links, b.joints, 0, thrusters)
        .expect("surrogate humanoid fixture is valid")
}

/// Shoulder-roll angle of the initial pose ("arms open").
pub const INITIAL_SHOULDER_ROLL_DEG: f64 = 25.0;

/// Initial joint vector: both shoulder rolls at 25°, everything else zero.
/// For models without the humanoid layout, all zeros.
pub fn initial_joint_configuration(model: &RobotModel) -> DVector<f64> {
    let mut s = DVector::zeros(model.dof());
    for (j, joint) in model.joints.iter().enumerate() {
        if joint.name.ends_with("_shoulder_roll") {
            s[j] = INITIAL_SHOULDER_ROLL_DEG.to_radians();
        }
    }
    s
}

/// Planar two-link chain used as a hand-checkable fixture: a 1 m × 0.1 m × 0.1 m
/// box base with a 1 m pendulum rod hinged about y at its +x end. Thrusters
/// are spread over both links.
pub fn two_link_chain() -> RobotModel {
    let base = Link {
        name: "base".into(),
        inertial: Inertial {
            mass: 2.0,
            com: Vec3::zeros(),
            inertia: box_inertia(2.0, Vec3::new(1.0, 0.1, 0.1)),
        },
    };
    let rod = Link {
        name: "rod".into(),
        inertial: Inertial {
            mass: 1.0,
            com: Vec3::new(0.0, 0.0, -0.5),
            inertia: box_inertia(1.0, Vec3::new(0.1, 0.1, 1.0)),
        },
    };
    let joint = Joint {
        name: "hinge".into(),
        kind: JointKind::Continuous,
        parent: 0,
        child: 1,
        origin: Pose::from_translation(Vec3::new(0.5, 0.0, 0.0)),
        axis: Vec3::y(),
    };
    let thrusters = vec![
        Thruster {
            name: "t1".into(),
            link: 0,
            position: Vec3::new(-0.5, 0.0, 0.0),
            direction: Vec3::z(),
        },
        Thruster {
            name: "t2".into(),
            link: 0,
            position: Vec3::new(0.0, 0.05, 0.0),
            direction: Vec3::z(),
        },
        Thruster {
            name: "t3".into(),
            link: 1,
            position: Vec3::new(0.0, 0.0, -1.0),
            direction: Vec3::z(),
        },
        Thruster {
            name: "t4".into(),
            link: 1,
            position: Vec3::new(0.0, 0.0, -0.5),
            direction: Vec3::x(),
        },
    ];
    RobotModel::new("two_link_chain", vec![base, rod], vec![joint], 0, thrusters)
        .expect("two-link fixture is valid")
}
