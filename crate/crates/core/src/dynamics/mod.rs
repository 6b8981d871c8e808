//! Passive articulated rigid-body stepping: floating base under gravity,
//! joint damping/friction/stiffness, penalty contact with a ground plane.

mod export;

use std::collections::BTreeMap;

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Serialize};

pub use export::{trajectory_csv, write_trajectory_csv};

use crate::asset::{AssetModel, JointConfig, JointKind, Topology};
use crate::collision::CollisionModel;
use crate::mesh::{MeshError, MeshStore};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, thiserror::Error)]
pub enum DynError {
    #[error("link `{link}` has no {field}")]
    MissingInertial { link: String, field: &'static str },
    #[error("simulation became non-finite at t = {time:.4} s")]
    Instability { time: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynParams {
    pub dt: f64,
    pub gravity: f64,
    /// Ground plane height, or None for no ground.
    pub ground: Option<f64>,
    /// Penalty stiffness per contact point, N/m.
    pub contact_stiffness: f64,
    pub ground_friction: f64,
    /// Velocity scale of the smoothed Coulomb terms, rad/s or m/s.
    pub friction_velocity: f64,
    pub fixed_base: bool,
    /// Removes spurious energy gain on steps without contact or limit hits.
    pub energy_guard: bool,
}

impl Default for DynParams {
    fn default() -> Self {
        DynParams {
            dt: 1.0 / 240.0,
            gravity: GRAVITY,
            ground: Some(0.0),
            contact_stiffness: 1e4,
            ground_friction: 0.5,
            friction_velocity: 0.01,
            fixed_base: false,
            energy_guard: true,
        }
    }
}

/// Generalized state: base pose and twist plus joint coordinates and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynState {
    pub base_pose: Isometry3<f64>,
    /// Linear velocity of the base origin then angular velocity, world frame.
    pub base_twist: [f64; 6],
    pub q: JointConfig,
    pub qdot: JointConfig,
}

impl DynState {
    pub fn at_rest(base_pose: Isometry3<f64>, q: JointConfig) -> Self {
        DynState {
            base_pose,
            base_twist: [0.0; 6],
            q,
            qdot: JointConfig::new(),
        }
    }

    fn is_finite(&self) -> bool {
        let p = &self.base_pose;
        p.translation.vector.iter().all(|v| v.is_finite())
            && p.rotation.coords.iter().all(|v| v.is_finite())
            && self.base_twist.iter().all(|v| v.is_finite())
            && self
                .q
                .values
                .values()
                .chain(self.qdot.values.values())
                .all(|v| v.is_finite())
    }
}

/// States sampled every `dt`, the first one `dt` after `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub samples: Vec<DynState>,
}

impl Trajectory {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + (i + 1) as f64 * self.dt
    }
}

struct LinkDyn {
    mass: f64,
    /// Inertia about the COM in link axes.
    inertia: Matrix3<f64>,
    com: Vector3<f64>,
    /// Active joints from the root down to this link, as model joint indices.
    ancestors: Vec<usize>,
    hull: Vec<Point3<f64>>,
}

/// Per-step kinematic quantities.
struct Kin {
    poses: Vec<Isometry3<f64>>,
    /// World origin and unit axis of every model joint.
    frames: Vec<(Point3<f64>, Vector3<f64>)>,
    omega: Vec<Vector3<f64>>,
    /// Velocity-product (bias) accelerations of each link origin.
    acc_bias: Vec<Vector3<f64>>,
    alpha_bias: Vec<Vector3<f64>>,
}

/// A model prepared for repeated stepping.
pub struct Simulator {
    model: AssetModel,
    topo: Topology,
    links: Vec<LinkDyn>,
    /// Active joints as model indices, in generalized-coordinate order.
    active: Vec<usize>,
    column: BTreeMap<usize, usize>,
    pub params: DynParams,
}

impl Simulator {
    /// `hulls[i]` holds the contact points of link `i` in its own frame.
    pub fn new(
        model: &AssetModel,
        hulls: Vec<Vec<Point3<f64>>>,
        params: DynParams,
    ) -> Result<Self, DynError> {
        let topo = Topology::new(model);
        let active: Vec<usize> = (0..model.joints.len())
            .filter(|&j| model.joints[j].kind.is_active())
            .collect();
        let base_cols = if params.fixed_base { 0 } else { 6 };
        let column = active
            .iter()
            .enumerate()
            .map(|(k, &j)| (j, base_cols + k))
            .collect();
        let mut links = Vec::with_capacity(model.links.len());
        for (i, l) in model.links.iter().enumerate() {
            let mass = l.mass.ok_or_else(|| DynError::MissingInertial {
                link: l.name.clone(),
                field: "mass",
            })?;
            let inertia = l
                .inertia_in_link_frame()
                .ok_or_else(|| DynError::MissingInertial {
                    link: l.name.clone(),
                    field: "inertia",
                })?;
            let mut ancestors = Vec::new();
            let mut cur = i;
            while let Some(j) = topo.parent_joint[cur] {
                if model.joints[j].kind.is_active() {
                    ancestors.push(j);
                }
                cur = topo.link_index[&model.joints[j].parent];
            }
            ancestors.reverse();
            links.push(LinkDyn {
                mass,
                inertia,
                com: l.com(),
                ancestors,
                hull: hulls.get(i).cloned().unwrap_or_default(),
            });
        }
        Ok(Simulator {
            model: model.clone(),
            topo,
            links,
            active,
            column,
            params,
        })
    }

    /// Uses the vertices of each link's collision hulls as contact points.
    pub fn from_store(
        model: &AssetModel,
        store: &MeshStore,
        params: DynParams,
    ) -> Result<Self, DynError> {
        let cm = CollisionModel::new(model, store)?;
        let hulls = cm
            .hulls
            .iter()
            .map(|hs| hs.iter().flat_map(|h| h.vertices.iter().copied()).collect())
            .collect();
        Self::new(model, hulls, params)
    }

    pub fn model(&self) -> &AssetModel {
        &self.model
    }

    fn dofs(&self) -> usize {
        self.active.len() + if self.params.fixed_base { 0 } else { 6 }
    }

    fn velocity(&self, s: &DynState) -> DVector<f64> {
        let mut v = DVector::zeros(self.dofs());
        if !self.params.fixed_base {
            for k in 0..6 {
                v[k] = s.base_twist[k];
            }
        }
        for (&j, &c) in &self.column {
            v[c] = s.qdot.get(&self.model.joints[j].name);
        }
        v
    }

    fn kinematics(&self, s: &DynState) -> Kin {
        let m = &self.model;
        let poses = self.topo.link_poses(m, &s.q, &s.base_pose);
        let frames: Vec<(Point3<f64>, Vector3<f64>)> = m
            .joints
            .iter()
            .map(|j| {
                let f = poses[self.topo.link_index[&j.parent]] * j.origin.to_isometry();
                (
                    Point3::from(f.translation.vector),
                    f.rotation * j.axis_vector(),
                )
            })
            .collect();
        let n = m.links.len();
        let mut vel = vec![Vector3::zeros(); n];
        let mut omega = vec![Vector3::zeros(); n];
        let mut acc_bias = vec![Vector3::zeros(); n];
        let mut alpha_bias = vec![Vector3::zeros(); n];
        let root = self.topo.root;
        if !self.params.fixed_base {
            vel[root] = Vector3::new(s.base_twist[0], s.base_twist[1], s.base_twist[2]);
            omega[root] = Vector3::new(s.base_twist[3], s.base_twist[4], s.base_twist[5]);
        }
        for &ji in &self.topo.joint_order {
            let j = &m.joints[ji];
            let p = self.topo.link_index[&j.parent];
            let c = self.topo.link_index[&j.child];
            let d = poses[c].translation.vector - poses[p].translation.vector;
            let a = frames[ji].1;
            let qd = s.qdot.get(&j.name);
            let (wp, ap) = (omega[p], alpha_bias[p]);
            omega[c] = wp;
            vel[c] = vel[p] + wp.cross(&d);
            alpha_bias[c] = ap;
            acc_bias[c] = acc_bias[p] + ap.cross(&d) + wp.cross(&wp.cross(&d));
            match j.kind {
                JointKind::Revolute | JointKind::Continuous => {
                    omega[c] += a * qd;
                    alpha_bias[c] += wp.cross(&a) * qd;
                }
                JointKind::Prismatic => {
                    vel[c] += a * qd;
                    acc_bias[c] += 2.0 * wp.cross(&a) * qd;
                }
                JointKind::Fixed => {}
            }
        }
        Kin {
            poses,
            frames,
            omega,
            acc_bias,
            alpha_bias,
        }
    }

    /// Linear and angular Jacobians of a point rigidly attached to `link`.
    fn jacobians(&self, kin: &Kin, link: usize, p: &Point3<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dofs();
        let mut jv = DMatrix::zeros(3, n);
        let mut jw = DMatrix::zeros(3, n);
        if !self.params.fixed_base {
            let r = p - Point3::from(kin.poses[self.topo.root].translation.vector);
            for k in 0..3 {
                jv[(k, k)] = 1.0;
                jw[(k, 3 + k)] = 1.0;
                let e = Vector3::ith(k, 1.0);
                jv.fixed_view_mut::<3, 1>(0, 3 + k).copy_from(&e.cross(&r));
            }
        }
        for &ji in &self.links[link].ancestors {
            let col = self.column[&ji];
            let (o, a) = kin.frames[ji];
            match self.model.joints[ji].kind {
                JointKind::Prismatic => jv.fixed_view_mut::<3, 1>(0, col).copy_from(&a),
                _ => {
                    jv.fixed_view_mut::<3, 1>(0, col)
                        .copy_from(&a.cross(&(p - o)));
                    jw.fixed_view_mut::<3, 1>(0, col).copy_from(&a);
                }
            }
        }
        (jv, jw)
    }

    fn com_world(&self, kin: &Kin, i: usize) -> Point3<f64> {
        kin.poses[i] * Point3::from(self.links[i].com)
    }

    fn world_inertia(&self, kin: &Kin, i: usize) -> Matrix3<f64> {
        let r = kin.poses[i].rotation.to_rotation_matrix();
        r.matrix() * self.links[i].inertia * r.matrix().transpose()
    }

    /// Mass matrix and generalized forces from gravity and velocity products.
    fn dynamics_terms(&self, kin: &Kin) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dofs();
        let mut mm = DMatrix::zeros(n, n);
        let mut q = DVector::zeros(n);
        let g = Vector3::new(0.0, 0.0, -self.params.gravity);
        for (i, l) in self.links.iter().enumerate() {
            let c = self.com_world(kin, i);
            let (jv, jw) = self.jacobians(kin, i, &c);
            let iw = self.world_inertia(kin, i);
            let rho = c - Point3::from(kin.poses[i].translation.vector);
            let w = kin.omega[i];
            let a_c = kin.acc_bias[i] + kin.alpha_bias[i].cross(&rho) + w.cross(&w.cross(&rho));
            mm += l.mass * jv.transpose() * &jv + jw.transpose() * iw * &jw;
            let f = l.mass * (g - a_c);
            let tau = -(iw * kin.alpha_bias[i]) - w.cross(&(iw * w));
            q += jv.transpose() * DVector::from_column_slice(f.as_slice())
                + jw.transpose() * DVector::from_column_slice(tau.as_slice());
        }
        (mm, q)
    }

    /// Kinetic and potential energy (gravity plus joint springs about 0).
    pub fn energy(&self, s: &DynState) -> (f64, f64) {
        let kin = self.kinematics(s);
        let (mm, _) = self.dynamics_terms(&kin);
        let v = self.velocity(s);
        let ke = 0.5 * v.dot(&(&mm * &v));
        let mut pe = 0.0;
        for i in 0..self.links.len() {
            pe += self.links[i].mass * self.params.gravity * self.com_world(&kin, i).z;
        }
        for &j in &self.active {
            let js = &self.model.joints[j];
            let k = js.dynamics.and_then(|d| d.stiffness).unwrap_or(0.0);
            pe += 0.5 * k * s.q.get(&js.name).powi(2);
        }
        (ke, pe)
    }

    /// One linearly-implicit Euler step of length `dt`.
    pub fn step(&self, s: &DynState, dt: f64) -> DynState {
        self.step_inner(s, dt).0
    }

    fn step_inner(&self, s: &DynState, dt: f64) -> (DynState, bool) {
        let n = self.dofs();
        if n == 0 {
            return (s.clone(), false);
        }
        let p = &self.params;
        let kin = self.kinematics(s);
        let (mm, q) = self.dynamics_terms(&kin);
        let v = self.velocity(s);
        let mut lhs = mm.clone();
        let mut rhs = q * dt;

        for &j in &self.active {
            let js = &self.model.joints[j];
            let col = self.column[&j];
            let d = js.dynamics.unwrap_or_default();
            let (beta, mu, k) = (
                d.damping.unwrap_or(0.0),
                d.friction.unwrap_or(0.0),
                d.stiffness.unwrap_or(0.0),
            );
            let (x, xd) = (s.q.get(&js.name), v[col]);
            let th = (xd / p.friction_velocity).tanh();
            let dmu = mu / p.friction_velocity * (1.0 - th * th);
            lhs[(col, col)] += dt * (beta + dmu) + dt * dt * k;
            rhs[col] += dt * (-beta * xd - mu * th - k * x - dt * k * xd);
        }

        let mut touching = false;
        if let Some(h) = p.ground {
            let k = p.contact_stiffness;
            for (i, l) in self.links.iter().enumerate() {
                let c = 2.0 * (k * l.mass).sqrt();
                for local in &l.hull {
                    let w = kin.poses[i] * local;
                    let depth = h - w.z;
                    if depth <= 0.0 {
                        continue;
                    }
                    let (jv, _) = self.jacobians(&kin, i, &w);
                    let pv = &jv * &v;
                    let fn_now = k * depth - c * pv[2];
                    if fn_now <= 0.0 {
                        continue;
                    }
                    touching = true;
                    let jz = jv.row(2).transpose();
                    let cz = c + dt * k;
                    lhs += dt * cz * &jz * jz.transpose();
                    rhs += dt * (k * depth - cz * pv[2]) * &jz;
                    let vt = (pv[0] * pv[0] + pv[1] * pv[1] + p.friction_velocity.powi(2)).sqrt();
                    let b = p.ground_friction * fn_now / vt;
                    for r in 0..2 {
                        let jt = jv.row(r).transpose();
                        lhs += dt * b * &jt * jt.transpose();
                        rhs -= dt * b * pv[r] * &jt;
                    }
                }
            }
        }

        let dv = match lhs.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => lhs
                .lu()
                .solve(&rhs)
                .unwrap_or_else(|| DVector::from_element(n, f64::NAN)),
        };
        let vn = v + dv;
        let mut out = s.clone();
        if !p.fixed_base {
            let lin = Vector3::new(vn[0], vn[1], vn[2]);
            let ang = Vector3::new(vn[3], vn[4], vn[5]);
            out.base_twist = [vn[0], vn[1], vn[2], vn[3], vn[4], vn[5]];
            let t = s.base_pose.translation.vector + lin * dt;
            let r = UnitQuaternion::from_scaled_axis(ang * dt) * s.base_pose.rotation;
            out.base_pose = Isometry3::from_parts(Translation3::from(t), r);
        }
        let mut limit_hit = false;
        for &j in &self.active {
            let js = &self.model.joints[j];
            let col = self.column[&j];
            let mut x = s.q.get(&js.name) + dt * vn[col];
            let mut xd = vn[col];
            if let (JointKind::Revolute | JointKind::Prismatic, Some(l)) = (js.kind, js.limits) {
                if x > l.upper || x < l.lower {
                    x = x.clamp(l.lower, l.upper);
                    xd = 0.0;
                    limit_hit = true;
                }
            }
            out.q.set(js.name.clone(), x);
            out.qdot.set(js.name.clone(), xd);
        }
        let active_events = touching || limit_hit;
        (out, active_events)
    }

    fn scale_velocity(&self, s: &mut DynState, f: f64) {
        for v in s.base_twist.iter_mut() {
            *v *= f;
        }
        for v in s.qdot.values.values_mut() {
            *v *= f;
        }
    }

    /// Advances `steps` steps of `params.dt`, calling `visit` after each.
    pub fn run(
        &self,
        start: DynState,
        steps: usize,
        t0: f64,
        mut visit: impl FnMut(&DynState),
    ) -> Result<DynState, DynError> {
        let dt = self.params.dt;
        let mut s = start;
        let mut e_prev = if self.params.energy_guard {
            Some(self.energy(&s))
        } else {
            None
        };
        for k in 0..steps {
            let (mut next, events) = self.step_inner(&s, dt);
            if !next.is_finite() || next.base_pose.translation.vector.amax() > 1e6 {
                return Err(DynError::Instability {
                    time: t0 + (k + 1) as f64 * dt,
                });
            }
            if let Some((ke0, pe0)) = e_prev {
                let (ke, pe) = self.energy(&next);
                let budget = ke0 + pe0 - pe;
                if !events && ke + pe > ke0 + pe0 && ke > 0.0 {
                    self.scale_velocity(&mut next, (budget.max(0.0) / ke).sqrt());
                    e_prev = Some(self.energy(&next));
                } else {
                    e_prev = Some((ke, pe));
                }
            }
            visit(&next);
            s = next;
        }
        Ok(s)
    }

    /// Base pose that puts the lowest contact point `clearance` above ground.
    pub fn placed_base(&self, q: &JointConfig, clearance: f64) -> Isometry3<f64> {
        let Some(h) = self.params.ground else {
            return Isometry3::identity();
        };
        let poses = self.topo.link_poses(&self.model, q, &Isometry3::identity());
        let lowest = self
            .links
            .iter()
            .zip(&poses)
            .flat_map(|(l, pose)| l.hull.iter().map(move |p| (pose * p).z))
            .fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            Isometry3::translation(0.0, 0.0, h + clearance - lowest)
        } else {
            Isometry3::identity()
        }
    }
}

/// One step of the passive dynamics.
pub fn step_dynamics(sim: &Simulator, state: &DynState, dt: f64) -> DynState {
    sim.step(state, dt)
}

/// Places the asset 1 mm above the ground at `q0`, settles for `t_set`,
/// then records every step of `t_test`.
pub fn simulate_passive(
    sim: &Simulator,
    q0: &JointConfig,
    t_set: f64,
    t_test: f64,
) -> Result<(DynState, Trajectory), DynError> {
    let dt = sim.params.dt;
    let start = DynState::at_rest(sim.placed_base(q0, 1e-3), q0.clone());
    let n_set = (t_set / dt).round() as usize;
    let n_test = (t_test / dt).round() as usize;
    let reference = sim.run(start, n_set, 0.0, |_| {})?;
    let mut samples = Vec::with_capacity(n_test);
    sim.run(reference.clone(), n_test, n_set as f64 * dt, |s| {
        samples.push(s.clone())
    })?;
    Ok((
        reference,
        Trajectory {
            dt,
            t0: n_set as f64 * dt,
            samples,
        },
    ))
}
