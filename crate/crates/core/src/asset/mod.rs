//! Articulated asset model: links, joints, mesh references and semantics.
//!
//! The model mirrors the subset of URDF that matters for physical
//! parameter synthesis. Everything outside that subset is carried along
//! as opaque XML so a parse/write cycle does not lose it.

mod kinematics;
mod semantics;
mod urdf;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub use kinematics::{forward_kinematics, project_to_limits, wrap_angle, Topology};
pub use semantics::{parse_semantics, SemanticEntry, SemanticMap};
pub use urdf::{parse_urdf, write_urdf, INITIAL_STATE_TAG};

/// Source position of an XML element, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

fn loc_suffix(loc: &Option<Location>) -> String {
    match loc {
        Some(l) => format!(" at {l}"),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssetError {
    #[error("malformed XML: {message}{}", loc_suffix(.location))]
    Xml {
        message: String,
        location: Option<Location>,
    },
    #[error("invalid value for `{field}`: {message}{}", loc_suffix(.location))]
    InvalidValue {
        field: String,
        message: String,
        location: Option<Location>,
    },
    #[error("duplicate {kind} name `{name}`{}", loc_suffix(.location))]
    DuplicateName {
        kind: &'static str,
        name: String,
        location: Option<Location>,
    },
    #[error("joint `{joint}` references unknown link `{link}`{}", loc_suffix(.location))]
    UnresolvedLink {
        joint: String,
        link: String,
        location: Option<Location>,
    },
    #[error("link `{link}` has more than one parent joint{}", loc_suffix(.location))]
    MultipleParents {
        link: String,
        location: Option<Location>,
    },
    #[error("joint graph contains a cycle through `{joint}`{}", loc_suffix(.location))]
    CyclicJointGraph {
        joint: String,
        location: Option<Location>,
    },
    #[error("asset has multiple root links: {}", .roots.join(", "))]
    MultipleRoots { roots: Vec<String> },
    #[error("asset has no links")]
    Empty,
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("joint `{0}` is fixed and has no coordinate")]
    FixedJointCoordinate(String),
}

/// Rigid placement given as translation plus URDF roll/pitch/yaw.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

impl Pose {
    pub fn is_identity(&self) -> bool {
        self.xyz == [0.0; 3] && self.rpy == [0.0; 3]
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let rot = UnitQuaternion::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]);
        Isometry3::from_parts(
            Translation3::new(self.xyz[0], self.xyz[1], self.xyz[2]),
            rot,
        )
    }

    pub fn scaled(&self, s: f64) -> Pose {
        Pose {
            xyz: [self.xyz[0] * s, self.xyz[1] * s, self.xyz[2] * s],
            rpy: self.rpy,
        }
    }
}

/// Symmetric rotational inertia in URDF's six-component form, kg·m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inertia {
    pub ixx: f64,
    pub ixy: f64,
    pub ixz: f64,
    pub iyy: f64,
    pub iyz: f64,
    pub izz: f64,
}

impl Inertia {
    pub fn diagonal(ixx: f64, iyy: f64, izz: f64) -> Self {
        Inertia {
            ixx,
            ixy: 0.0,
            ixz: 0.0,
            iyy,
            iyz: 0.0,
            izz,
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.ixx, self.ixy, self.ixz, self.ixy, self.iyy, self.iyz, self.ixz, self.iyz,
            self.izz,
        )
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Inertia {
            ixx: m[(0, 0)],
            ixy: m[(0, 1)],
            ixz: m[(0, 2)],
            iyy: m[(1, 1)],
            iyz: m[(1, 2)],
            izz: m[(2, 2)],
        }
    }

    fn components(&self) -> [f64; 6] {
        [self.ixx, self.ixy, self.ixz, self.iyy, self.iyz, self.izz]
    }
}

/// Geometry attached to a visual or collision element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    Mesh {
        filename: String,
        scale: [f64; 3],
    },
    /// Any non-mesh `<geometry>` content, kept verbatim and never interpreted.
    Opaque(String),
}

/// One `<visual>` or `<collision>` element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRef {
    pub name: Option<String>,
    pub origin: Pose,
    pub geometry: Geometry,
    pub extras: Vec<String>,
}

impl GeometryRef {
    pub fn mesh(filename: impl Into<String>) -> Self {
        GeometryRef {
            name: None,
            origin: Pose::default(),
            geometry: Geometry::Mesh {
                filename: filename.into(),
                scale: [1.0; 3],
            },
            extras: Vec::new(),
        }
    }

    pub fn mesh_filename(&self) -> Option<(&str, [f64; 3])> {
        match &self.geometry {
            Geometry::Mesh { filename, scale } => Some((filename.as_str(), *scale)),
            Geometry::Opaque(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub mass: Option<f64>,
    pub inertia: Option<Inertia>,
    /// Inertial frame origin in the link frame, m.
    pub center_of_mass: Option<[f64; 3]>,
    /// Orientation of the inertial frame relative to the link frame.
    pub inertial_rpy: [f64; 3],
    pub visuals: Vec<GeometryRef>,
    pub collisions: Vec<GeometryRef>,
    pub extras: Vec<String>,
}

impl LinkSpec {
    pub fn new(name: impl Into<String>) -> Self {
        LinkSpec {
            name: name.into(),
            mass: None,
            inertia: None,
            center_of_mass: None,
            inertial_rpy: [0.0; 3],
            visuals: Vec::new(),
            collisions: Vec::new(),
            extras: Vec::new(),
        }
    }

    /// Inertia tensor about the COM expressed in the link frame.
    pub fn inertia_in_link_frame(&self) -> Option<Matrix3<f64>> {
        let i = self.inertia?.to_matrix();
        let r = UnitQuaternion::from_euler_angles(
            self.inertial_rpy[0],
            self.inertial_rpy[1],
            self.inertial_rpy[2],
        )
        .to_rotation_matrix();
        Some(r.matrix() * i * r.matrix().transpose())
    }

    pub fn com(&self) -> Vector3<f64> {
        let c = self.center_of_mass.unwrap_or([0.0; 3]);
        Vector3::new(c[0], c[1], c[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Continuous,
    Fixed,
}

impl JointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
            JointKind::Continuous => "continuous",
            JointKind::Fixed => "fixed",
        }
    }

    pub fn is_active(&self) -> bool {
        !matches!(self, JointKind::Fixed)
    }

    pub fn is_angular(&self) -> bool {
        matches!(self, JointKind::Revolute | JointKind::Continuous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: f64,
    pub upper: f64,
    pub effort: Option<f64>,
    pub velocity: Option<f64>,
}

impl JointLimits {
    pub fn new(lower: f64, upper: f64) -> Self {
        JointLimits {
            lower,
            upper,
            effort: None,
            velocity: None,
        }
    }

    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Passive joint dynamics. Raw URDF input may carry only part of the triplet.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointDynamics {
    pub damping: Option<f64>,
    pub friction: Option<f64>,
    pub stiffness: Option<f64>,
}

impl JointDynamics {
    pub fn triplet(damping: f64, friction: f64, stiffness: f64) -> Self {
        JointDynamics {
            damping: Some(damping),
            friction: Some(friction),
            stiffness: Some(stiffness),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.damping.is_some() && self.friction.is_some() && self.stiffness.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    pub origin: Pose,
    pub axis: [f64; 3],
    pub limits: Option<JointLimits>,
    pub dynamics: Option<JointDynamics>,
    pub extras: Vec<String>,
}

impl JointSpec {
    pub fn new(
        name: impl Into<String>,
        kind: JointKind,
        parent: impl Into<String>,
        child: impl Into<String>,
    ) -> Self {
        JointSpec {
            name: name.into(),
            kind,
            parent: parent.into(),
            child: child.into(),
            origin: Pose::default(),
            axis: [1.0, 0.0, 0.0],
            limits: None,
            dynamics: None,
            extras: Vec::new(),
        }
    }

    pub fn axis_vector(&self) -> Vector3<f64> {
        Vector3::new(self.axis[0], self.axis[1], self.axis[2])
    }

    /// Effective coordinate bounds; continuous joints wrap on (−π, π].
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.kind {
            JointKind::Fixed => None,
            JointKind::Continuous => Some((-std::f64::consts::PI, std::f64::consts::PI)),
            _ => self.limits.map(|l| (l.lower, l.upper)),
        }
    }
}

/// Joint coordinates keyed by joint name, rad or m depending on joint kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig {
    pub values: BTreeMap<String, f64>,
}

impl JointConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, joint: &str) -> f64 {
        self.values.get(joint).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, joint: impl Into<String>, value: f64) {
        self.values.insert(joint.into(), value);
    }

    pub fn with(mut self, joint: impl Into<String>, value: f64) -> Self {
        self.set(joint, value);
        self
    }

    /// Zero configuration over every active joint of `model`.
    pub fn zeros(model: &AssetModel) -> Self {
        let mut q = JointConfig::new();
        for j in model.joints.iter().filter(|j| j.kind.is_active()) {
            q.set(j.name.clone(), 0.0);
        }
        q
    }

    /// Max-norm distance over the union of keys (missing keys read as 0).
    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        let mut m: f64 = 0.0;
        for k in self.values.keys().chain(other.values.keys()) {
            m = m.max((self.get(k) - other.get(k)).abs());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetModel {
    pub name: String,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub root: String,
    /// Robot-element attributes (besides `name`) and namespace declarations.
    pub metadata: BTreeMap<String, String>,
    pub documented_initial_state: Option<BTreeMap<String, f64>>,
    /// Top-level elements outside the interpreted subset, verbatim.
    pub extras: Vec<String>,
}

impl AssetModel {
    /// Builds a model and checks every structural invariant.
    pub fn new(
        name: impl Into<String>,
        links: Vec<LinkSpec>,
        joints: Vec<JointSpec>,
    ) -> Result<Self, AssetError> {
        let mut model = AssetModel {
            name: name.into(),
            links,
            joints,
            root: String::new(),
            metadata: BTreeMap::new(),
            documented_initial_state: None,
            extras: Vec::new(),
        };
        model.root = model.find_root()?;
        model.validate()?;
        Ok(model)
    }

    pub fn link(&self, name: &str) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn link_mut(&mut self, name: &str) -> Option<&mut LinkSpec> {
        self.links.iter_mut().find(|l| l.name == name)
    }

    pub fn joint(&self, name: &str) -> Option<&JointSpec> {
        self.joints.iter().find(|j| j.name == name)
    }

    pub fn joint_mut(&mut self, name: &str) -> Option<&mut JointSpec> {
        self.joints.iter_mut().find(|j| j.name == name)
    }

    pub fn active_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.joints.iter().filter(|j| j.kind.is_active())
    }

    pub fn parent_joint_of(&self, link: &str) -> Option<&JointSpec> {
        self.joints.iter().find(|j| j.child == link)
    }

    /// Joints from the root down to `link`, root-most first.
    pub fn root_path(&self, link: &str) -> Vec<&JointSpec> {
        let mut path = Vec::new();
        let mut cur = link;
        while let Some(j) = self.parent_joint_of(cur) {
            path.push(j);
            cur = &j.parent;
            if path.len() > self.joints.len() {
                break;
            }
        }
        path.reverse();
        path
    }

    /// The unique link that is nobody's child.
    pub(crate) fn find_root(&self) -> Result<String, AssetError> {
        if self.links.is_empty() {
            return Err(AssetError::Empty);
        }
        let roots: Vec<String> = self
            .links
            .iter()
            .filter(|l| !self.joints.iter().any(|j| j.child == l.name))
            .map(|l| l.name.clone())
            .collect();
        match roots.len() {
            1 => Ok(roots[0].clone()),
            0 => Err(AssetError::CyclicJointGraph {
                joint: self
                    .joints
                    .first()
                    .map(|j| j.name.clone())
                    .unwrap_or_default(),
                location: None,
            }),
            _ => Err(AssetError::MultipleRoots { roots }),
        }
    }

    /// Checks every invariant of links, joints and the kinematic tree.
    pub fn validate(&self) -> Result<(), AssetError> {
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.links {
            if !seen.insert(l.name.as_str()) {
                return Err(AssetError::DuplicateName {
                    kind: "link",
                    name: l.name.clone(),
                    location: None,
                });
            }
            validate_link(l)?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for j in &self.joints {
            if !seen.insert(j.name.as_str()) {
                return Err(AssetError::DuplicateName {
                    kind: "joint",
                    name: j.name.clone(),
                    location: None,
                });
            }
            validate_joint(j)?;
            for end in [&j.parent, &j.child] {
                if self.link(end).is_none() {
                    return Err(AssetError::UnresolvedLink {
                        joint: j.name.clone(),
                        link: end.clone(),
                        location: None,
                    });
                }
            }
        }
        for l in &self.links {
            if self.joints.iter().filter(|j| j.child == l.name).count() > 1 {
                return Err(AssetError::MultipleParents {
                    link: l.name.clone(),
                    location: None,
                });
            }
        }
        let root = self.find_root()?;
        if root != self.root {
            return Err(AssetError::InvalidValue {
                field: "root".into(),
                message: format!("declared root `{}` but tree root is `{root}`", self.root),
                location: None,
            });
        }
        // Every link must be reachable from the root; anything left over sits on a cycle.
        let mut reached = std::collections::BTreeSet::from([root.as_str()]);
        let mut frontier = vec![root.as_str()];
        while let Some(l) = frontier.pop() {
            for j in self.joints.iter().filter(|j| j.parent == l) {
                if reached.insert(j.child.as_str()) {
                    frontier.push(&j.child);
                }
            }
        }
        if let Some(j) = self
            .joints
            .iter()
            .find(|j| !reached.contains(j.child.as_str()))
        {
            return Err(AssetError::CyclicJointGraph {
                joint: j.name.clone(),
                location: None,
            });
        }
        Ok(())
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> AssetError {
    AssetError::InvalidValue {
        field: field.into(),
        message: message.into(),
        location: None,
    }
}

pub(crate) fn validate_link(l: &LinkSpec) -> Result<(), AssetError> {
    if let Some(m) = l.mass {
        if !(m.is_finite() && m > 0.0) {
            return Err(invalid(
                format!("link[{}].mass", l.name),
                format!("mass must be positive and finite, got {m}"),
            ));
        }
    }
    if let Some(i) = l.inertia {
        if i.components().iter().any(|v| !v.is_finite()) {
            return Err(invalid(
                format!("link[{}].inertia", l.name),
                "inertia components must be finite",
            ));
        }
    }
    Ok(())
}

pub(crate) fn validate_joint(j: &JointSpec) -> Result<(), AssetError> {
    let norm = j.axis_vector().norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(invalid(
            format!("joint[{}].axis", j.name),
            format!("axis must have unit norm, got {norm}"),
        ));
    }
    match (j.kind, &j.limits) {
        (JointKind::Revolute | JointKind::Prismatic, None) => {
            return Err(invalid(
                format!("joint[{}].limit", j.name),
                format!("{} joint requires limits", j.kind.as_str()),
            ));
        }
        (_, Some(lim))
            if !(lim.lower.is_finite() && lim.upper.is_finite()) || lim.lower > lim.upper =>
        {
            return Err(invalid(
                format!("joint[{}].limit", j.name),
                format!(
                    "need finite lower <= upper, got [{}, {}]",
                    lim.lower, lim.upper
                ),
            ));
        }
        _ => {}
    }
    if let Some(d) = &j.dynamics {
        for (field, v) in [
            ("damping", d.damping),
            ("friction", d.friction),
            ("stiffness", d.stiffness),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(
                        format!("joint[{}].dynamics.{field}", j.name),
                        format!("must be finite and non-negative, got {v}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_link() -> AssetModel {
        let mut j = JointSpec::new("hinge", JointKind::Revolute, "base", "lid");
        j.limits = Some(JointLimits::new(0.0, 1.57));
        AssetModel::new(
            "box",
            vec![LinkSpec::new("base"), LinkSpec::new("lid")],
            vec![j],
        )
        .unwrap()
    }

    #[test]
    fn root_is_the_parentless_link() {
        let m = two_link();
        assert_eq!(m.root, "base");
        assert_eq!(m.active_joints().count(), 1);
    }

    #[test]
    fn duplicate_link_rejected() {
        let err =
            AssetModel::new("x", vec![LinkSpec::new("a"), LinkSpec::new("a")], vec![]).unwrap_err();
        assert!(matches!(
            err,
            AssetError::MultipleRoots { .. } | AssetError::DuplicateName { .. }
        ));
    }

    #[test]
    fn negative_mass_rejected() {
        let mut m = two_link();
        m.links[1].mass = Some(-1.0);
        assert!(matches!(m.validate(), Err(AssetError::InvalidValue { .. })));
    }

    #[test]
    fn inverted_limits_rejected() {
        let mut m = two_link();
        m.joints[0].limits = Some(JointLimits::new(1.0, 0.0));
        assert!(m.validate().is_err());
    }

    #[test]
    fn root_path_lists_joints_top_down() {
        let mut j2 = JointSpec::new("slide", JointKind::Prismatic, "lid", "tip");
        j2.limits = Some(JointLimits::new(0.0, 0.1));
        let mut m = two_link();
        m.links.push(LinkSpec::new("tip"));
        m.joints.push(j2);
        m.validate().unwrap();
        let names: Vec<_> = m.root_path("tip").iter().map(|j| j.name.clone()).collect();
        assert_eq!(names, vec!["hinge", "slide"]);
    }
}
