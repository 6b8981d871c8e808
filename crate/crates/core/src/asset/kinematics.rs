use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};

use super::{AssetError, AssetModel, JointConfig, JointKind};

/// Index-based view of the kinematic tree, computed once per model.
#[derive(Debug, Clone)]
pub struct Topology {
    pub link_index: HashMap<String, usize>,
    /// Joint indices ordered so every parent link is placed before its child.
    pub joint_order: Vec<usize>,
    /// Parent joint index of every link (None for the root).
    pub parent_joint: Vec<Option<usize>>,
    pub root: usize,
}

impl Topology {
    pub fn new(model: &AssetModel) -> Self {
        let link_index: HashMap<String, usize> = model
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.clone(), i))
            .collect();
        let mut parent_joint = vec![None; model.links.len()];
        for (ji, j) in model.joints.iter().enumerate() {
            if let Some(&c) = link_index.get(&j.child) {
                parent_joint[c] = Some(ji);
            }
        }
        let root = link_index.get(&model.root).copied().unwrap_or(0);
        let mut joint_order = Vec::with_capacity(model.joints.len());
        let mut frontier = vec![model.root.as_str()];
        let mut head = 0;
        while head < frontier.len() {
            let parent = frontier[head];
            head += 1;
            for (ji, j) in model.joints.iter().enumerate() {
                if j.parent == parent {
                    joint_order.push(ji);
                    frontier.push(&j.child);
                }
            }
        }
        Topology {
            link_index,
            joint_order,
            parent_joint,
            root,
        }
    }

    /// Link transforms as a dense vector indexed like `model.links`.
    pub fn link_poses(
        &self,
        model: &AssetModel,
        q: &JointConfig,
        base: &Isometry3<f64>,
    ) -> Vec<Isometry3<f64>> {
        let mut poses = vec![Isometry3::identity(); model.links.len()];
        poses[self.root] = *base;
        for &ji in &self.joint_order {
            let j = &model.joints[ji];
            let p = self.link_index[&j.parent];
            let c = self.link_index[&j.child];
            poses[c] =
                poses[p] * j.origin.to_isometry() * joint_motion(j.kind, &j.axis, q.get(&j.name));
        }
        poses
    }
}

/// Transform produced by moving a joint to coordinate `value`.
pub(crate) fn joint_motion(kind: JointKind, axis: &[f64; 3], value: f64) -> Isometry3<f64> {
    let a = Vector3::new(axis[0], axis[1], axis[2]);
    match kind {
        JointKind::Revolute | JointKind::Continuous => Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Unit::new_normalize(a), value),
        ),
        JointKind::Prismatic => {
            Isometry3::from_parts(Translation3::from(a * value), UnitQuaternion::identity())
        }
        JointKind::Fixed => Isometry3::identity(),
    }
}

/// World pose of every link for configuration `q` with the root at `base_pose`.
///
/// Joints missing from `q` sit at zero.
pub fn forward_kinematics(
    model: &AssetModel,
    q: &JointConfig,
    base_pose: &Isometry3<f64>,
) -> Result<BTreeMap<String, Isometry3<f64>>, AssetError> {
    check_config(model, q)?;
    let topo = Topology::new(model);
    let poses = topo.link_poses(model, q, base_pose);
    Ok(model
        .links
        .iter()
        .zip(poses)
        .map(|(l, p)| (l.name.clone(), p))
        .collect())
}

pub(crate) fn check_config(model: &AssetModel, q: &JointConfig) -> Result<(), AssetError> {
    for name in q.values.keys() {
        match model.joint(name) {
            None => return Err(AssetError::UnknownJoint(name.clone())),
            Some(j) if !j.kind.is_active() => {
                return Err(AssetError::FixedJointCoordinate(name.clone()))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Maps an angle onto (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = x.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    // rem_euclid can land on exactly -π after the shift only through rounding
    if r <= -PI {
        r += two_pi;
    }
    r
}

/// Projects `q` onto the feasible joint box of `model`.
///
/// Limited joints are clamped, continuous joints wrapped. Entries naming
/// unknown or fixed joints are dropped.
pub fn project_to_limits(q: &JointConfig, model: &AssetModel) -> JointConfig {
    let mut out = JointConfig::new();
    for (name, &v) in &q.values {
        let Some(j) = model.joint(name) else { continue };
        let projected = match j.kind {
            JointKind::Fixed => continue,
            JointKind::Continuous => wrap_angle(v),
            _ => match j.limits {
                Some(l) => v.clamp(l.lower, l.upper),
                None => v,
            },
        };
        out.set(name.clone(), projected);
    }
    out
}
