//! Box-built articulated assets shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use artready_core::asset::{
    write_urdf, AssetModel, GeometryRef, Inertia, JointConfig, JointDynamics, JointKind,
    JointLimits, JointSpec, LinkSpec,
};
use artready_core::mesh::{write_obj, MeshStore, TriMesh};

pub type Aabb = ([f64; 3], [f64; 3]);

pub struct Fixture {
    pub name: String,
    pub model: AssetModel,
    pub boxes: BTreeMap<String, Vec<Aabb>>,
    pub initial: JointConfig,
}

pub struct Builder {
    name: String,
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    boxes: BTreeMap<String, Vec<Aabb>>,
    initial: JointConfig,
}

fn mesh_name(link: &str, i: usize) -> String {
    format!("meshes/{link}_{i}.obj")
}

impl Builder {
    /// Starts with a geometry-free `frame` root so that every moving part
    /// hangs off it and can collide with the body.
    pub fn new(name: &str) -> Self {
        Builder {
            name: name.into(),
            links: vec![LinkSpec::new("frame")],
            joints: Vec::new(),
            boxes: BTreeMap::new(),
            initial: JointConfig::new(),
        }
    }

    pub fn link(mut self, name: &str, boxes: &[Aabb]) -> Self {
        let mut l = LinkSpec::new(name);
        for i in 0..boxes.len() {
            l.visuals.push(GeometryRef::mesh(mesh_name(name, i)));
            l.collisions.push(GeometryRef::mesh(mesh_name(name, i)));
        }
        self.boxes.insert(name.into(), boxes.to_vec());
        self.links.push(l);
        self
    }

    pub fn fixed(mut self, name: &str, parent: &str, child: &str, xyz: [f64; 3]) -> Self {
        let mut j = JointSpec::new(name, JointKind::Fixed, parent, child);
        j.origin.xyz = xyz;
        self.joints.push(j);
        self
    }

    #[allow(clippy::too_many_arguments)]
    pub fn moving(
        mut self,
        name: &str,
        kind: JointKind,
        parent: &str,
        child: &str,
        xyz: [f64; 3],
        axis: [f64; 3],
        limits: (f64, f64),
        q0: f64,
    ) -> Self {
        let mut j = JointSpec::new(name, kind, parent, child);
        j.origin.xyz = xyz;
        j.axis = axis;
        j.limits = Some(JointLimits::new(limits.0, limits.1));
        self.joints.push(j);
        self.initial.set(name, q0);
        self
    }

    pub fn build(self) -> Fixture {
        Fixture {
            model: AssetModel::new(&self.name, self.links, self.joints).expect("fixture model"),
            name: self.name,
            boxes: self.boxes,
            initial: self.initial,
        }
    }
}

fn box_inertia(mass: f64, b: &Aabb, about: [f64; 3]) -> [[f64; 3]; 3] {
    let e: Vec<f64> = (0..3).map(|k| b.1[k] - b.0[k]).collect();
    let c: Vec<f64> = (0..3).map(|k| 0.5 * (b.0[k] + b.1[k]) - about[k]).collect();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        let (a, b2) = ((i + 1) % 3, (i + 2) % 3);
        m[i][i] =
            mass * (e[a] * e[a] + e[b2] * e[b2]) / 12.0 + mass * (c[a] * c[a] + c[b2] * c[b2]);
        for j in 0..3 {
            if i != j {
                m[i][j] = -mass * c[i] * c[j];
            }
        }
    }
    m
}

impl Fixture {
    pub fn store(&self) -> MeshStore {
        let mut s = MeshStore::default();
        for (link, boxes) in &self.boxes {
            for (i, b) in boxes.iter().enumerate() {
                s.insert(mesh_name(link, i), TriMesh::cuboid(b.0, b.1));
            }
        }
        s
    }

    /// Solid inertials of the given density on every link, a token mass on
    /// links without geometry, and `dynamics` on every moving joint.
    pub fn with_inertials(mut self, density: f64, dynamics: JointDynamics) -> Self {
        for link in &mut self.model.links {
            let Some(boxes) = self.boxes.get(&link.name) else {
                link.mass = Some(1e-3);
                link.inertia = Some(Inertia::diagonal(1e-6, 1e-6, 1e-6));
                link.center_of_mass = Some([0.0; 3]);
                continue;
            };
            let masses: Vec<f64> = boxes
                .iter()
                .map(|b| density * (0..3).map(|k| b.1[k] - b.0[k]).product::<f64>())
                .collect();
            let total: f64 = masses.iter().sum();
            let mut com = [0.0; 3];
            for (m, b) in masses.iter().zip(boxes) {
                for (k, c) in com.iter_mut().enumerate() {
                    *c += m * 0.5 * (b.0[k] + b.1[k]) / total;
                }
            }
            let mut it = [[0.0; 3]; 3];
            for (m, b) in masses.iter().zip(boxes) {
                let bi = box_inertia(*m, b, com);
                for i in 0..3 {
                    for j in 0..3 {
                        it[i][j] += bi[i][j];
                    }
                }
            }
            link.mass = Some(total);
            link.center_of_mass = Some(com);
            link.inertia = Some(Inertia {
                ixx: it[0][0],
                ixy: it[0][1],
                ixz: it[0][2],
                iyy: it[1][1],
                iyz: it[1][2],
                izz: it[2][2],
            });
        }
        for j in self.model.joints.iter_mut().filter(|j| j.kind.is_active()) {
            j.dynamics = Some(dynamics);
        }
        self
    }

    /// Writes `<dir>/<name>.urdf` plus its meshes, with the initial state
    /// documented in the URDF. Returns the URDF path.
    pub fn write(&self, dir: &Path) -> PathBuf {
        std::fs::create_dir_all(dir.join("meshes")).unwrap();
        let mut model = self.model.clone();
        if !self.initial.values.is_empty() {
            model.documented_initial_state = Some(self.initial.values.clone());
        }
        let path = dir.join(format!("{}.urdf", self.name));
        std::fs::write(&path, write_urdf(&model).unwrap()).unwrap();
        for (link, boxes) in &self.boxes {
            for (i, b) in boxes.iter().enumerate() {
                write_obj(&TriMesh::cuboid(b.0, b.1), &dir.join(mesh_name(link, i))).unwrap();
            }
        }
        path
    }
}

const REV: JointKind = JointKind::Revolute;
const PRI: JointKind = JointKind::Prismatic;

/// 0.2 m cube with a lid hinged on its back top edge. Negative angles drive
/// the lid into the body.
pub fn hinge_box(name: &str, q0: f64, lower: f64) -> Fixture {
    Builder::new(name)
        .link("body", &[([-0.1, -0.1, 0.0], [0.1, 0.1, 0.2])])
        .link("lid", &[([0.0, -0.1, 0.001], [0.2, 0.1, 0.02])])
        .fixed("mount", "frame", "body", [0.0; 3])
        .moving(
            "lid_hinge",
            REV,
            "frame",
            "lid",
            [-0.1, 0.0, 0.2],
            [0.0, -1.0, 0.0],
            (lower, 1.5),
            q0,
        )
        .build()
}

/// Cube with a door on a vertical hinge at its front-left edge. Positive
/// angles open the door outward; negative ones swing it into the body.
pub fn door_box(name: &str, q0: f64, lower: f64) -> Fixture {
    Builder::new(name)
        .link("body", &[([-0.1, -0.1, 0.0], [0.1, 0.1, 0.2])])
        .link("door", &[([-0.02, 0.0, 0.01], [-0.002, 0.2, 0.2])])
        .fixed("mount", "frame", "body", [0.0; 3])
        .moving(
            "door_hinge",
            REV,
            "frame",
            "door",
            [-0.1, -0.1, 0.0],
            [0.0, 0.0, 1.0],
            (lower, 1.5),
            q0,
        )
        .build()
}

/// Open-front carcass of five panels.
fn carcass(w: f64, d: f64, h: f64, t: f64) -> Vec<Aabb> {
    vec![
        ([-d / 2.0, -w / 2.0, 0.0], [d / 2.0, w / 2.0, t]),
        ([-d / 2.0, -w / 2.0, h - t], [d / 2.0, w / 2.0, h]),
        ([-d / 2.0, -w / 2.0, t], [d / 2.0, -w / 2.0 + t, h - t]),
        ([-d / 2.0, w / 2.0 - t, t], [d / 2.0, w / 2.0, h - t]),
        (
            [-d / 2.0, -w / 2.0 + t, t],
            [-d / 2.0 + t, w / 2.0 - t, h - t],
        ),
    ]
}

/// Cabinet with `n` stacked drawers sliding along +x. Each drawer is a box
/// that stops 4 mm short of the back panel when closed, so negative
/// positions push it through the back.
pub fn drawer_cabinet(name: &str, q0: &[f64]) -> Fixture {
    let (w, d, t) = (0.3, 0.3, 0.01);
    let n = q0.len();
    let slot = 0.12;
    let h = n as f64 * slot + 2.0 * t;
    let mut b = Builder::new(name)
        .link("carcass", &carcass(w, d, h, t))
        .fixed("mount", "frame", "carcass", [0.0; 3]);
    for (i, &q) in q0.iter().enumerate() {
        let link = format!("drawer{i}");
        let z0 = t + i as f64 * slot;
        b = b
            .link(
                &link,
                &[(
                    [-d / 2.0 + t + 0.004, -w / 2.0 + t + 0.003, 0.003],
                    [d / 2.0, w / 2.0 - t - 0.003, slot - 0.003],
                )],
            )
            .moving(
                &format!("slide{i}"),
                PRI,
                "frame",
                &link,
                [0.0, 0.0, z0],
                [1.0, 0.0, 0.0],
                (-0.1, 0.25),
                q,
            );
    }
    b.build()
}

/// Laptop: flat base, screen hinged at the back edge. At zero the screen
/// stands upright; at π/2 it lies shut on the base and beyond that it
/// sinks into it.
pub fn laptop(name: &str, q0: f64) -> Fixture {
    Builder::new(name)
        .link("base", &[([-0.12, -0.16, 0.0], [0.12, 0.16, 0.02])])
        .link("screen", &[([-0.008, -0.16, 0.001], [0.0, 0.16, 0.24])])
        .fixed("mount", "frame", "base", [0.0; 3])
        .moving(
            "screen_hinge",
            REV,
            "frame",
            "screen",
            [-0.12, 0.0, 0.02],
            [0.0, 1.0, 0.0],
            (-0.6, 1.7),
            q0,
        )
        .build()
}

/// Cube with a lid that slides vertically off its top; negative positions
/// sink it into the body.
pub fn slide_lid(name: &str, q0: f64) -> Fixture {
    Builder::new(name)
        .link("body", &[([-0.08, -0.05, 0.0], [0.08, 0.05, 0.1])])
        .link("lid", &[([-0.08, -0.05, 0.001], [0.08, 0.05, 0.02])])
        .fixed("mount", "frame", "body", [0.0; 3])
        .moving(
            "lid_lift",
            PRI,
            "frame",
            "lid",
            [0.0, 0.0, 0.1],
            [0.0, 0.0, 1.0],
            (-0.06, 0.1),
            q0,
        )
        .build()
}

/// Box with two half lids hinged on opposite edges.
pub fn twin_lid_box(name: &str, q_left: f64, q_right: f64) -> Fixture {
    Builder::new(name)
        .link("body", &[([-0.1, -0.1, 0.0], [0.1, 0.1, 0.15])])
        .link("left_lid", &[([0.0, -0.1, 0.001], [0.099, 0.1, 0.015])])
        .link("right_lid", &[([-0.099, -0.1, 0.001], [0.0, 0.1, 0.015])])
        .fixed("mount", "frame", "body", [0.0; 3])
        .moving(
            "left_hinge",
            REV,
            "frame",
            "left_lid",
            [-0.1, 0.0, 0.15],
            [0.0, -1.0, 0.0],
            (-0.4, 1.5),
            q_left,
        )
        .moving(
            "right_hinge",
            REV,
            "frame",
            "right_lid",
            [0.1, 0.0, 0.15],
            [0.0, 1.0, 0.0],
            (-0.4, 1.5),
            q_right,
        )
        .build()
}

/// Stapler-like: a long arm hinged at the back end of a base rail, with a
/// free swivel knob that never touches anything.
pub fn stapler(name: &str, q0: f64) -> Fixture {
    Builder::new(name)
        .link("rail", &[([-0.08, -0.02, 0.0], [0.08, 0.02, 0.02])])
        .link("arm", &[([0.0, -0.018, 0.002], [0.15, 0.018, 0.03])])
        .link("knob", &[([-0.01, -0.01, 0.0], [0.01, 0.01, 0.01])])
        .fixed("mount", "frame", "rail", [0.0; 3])
        .moving(
            "arm_hinge",
            REV,
            "frame",
            "arm",
            [-0.075, 0.0, 0.02],
            [0.0, -1.0, 0.0],
            (-0.3, 1.0),
            q0,
        )
        .moving(
            "knob_turn",
            REV,
            "frame",
            "knob",
            [0.3, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            (-1.0, 1.0),
            0.4,
        )
        .build()
}

/// Lid hinged about the x axis on the box's side edge.
pub fn side_hinge_box(name: &str, q0: f64) -> Fixture {
    Builder::new(name)
        .link("body", &[([-0.06, -0.1, 0.0], [0.06, 0.1, 0.12])])
        .link("lid", &[([-0.06, 0.0, 0.001], [0.06, 0.2, 0.012])])
        .fixed("mount", "frame", "body", [0.0; 3])
        .moving(
            "lid_hinge",
            REV,
            "frame",
            "lid",
            [0.0, -0.1, 0.12],
            [1.0, 0.0, 0.0],
            (-0.5, 2.0),
            q0,
        )
        .build()
}

/// The refinement suite: ten assets, each penetrating at its documented
/// state and resolvable inside its limits.
pub fn refinement_suite() -> Vec<Fixture> {
    vec![
        hinge_box("box_shallow", -0.08, -0.5),
        hinge_box("box_deep", -0.4, -0.5),
        door_box("door_inward", -0.3, -0.8),
        drawer_cabinet("cabinet_one", &[-0.05]),
        drawer_cabinet("cabinet_three", &[-0.03, 0.1, -0.08]),
        laptop("laptop_folded", 1.62),
        slide_lid("slide_sunk", -0.04),
        twin_lid_box("twin_lids", -0.25, -0.1),
        stapler("stapler_pressed", -0.2),
        side_hinge_box("side_lid", -0.3),
    ]
}

/// Eleven links: carcass, three drawers with handles, two doors on a side
/// compartment and a top lid.
pub fn big_cabinet(name: &str) -> Fixture {
    let (w, d, t) = (0.3, 0.3, 0.01);
    let slot = 0.12;
    let h = 3.0 * slot + 2.0 * t;
    let mut parts = carcass(w, d, h, t);
    // side compartment for the doors
    parts.push(([-d / 2.0, w / 2.0, 0.0], [d / 2.0, w / 2.0 + 0.2, t]));
    parts.push(([-d / 2.0, w / 2.0 + 0.19, t], [d / 2.0, w / 2.0 + 0.2, h]));
    parts.push(([-d / 2.0, w / 2.0, t], [-d / 2.0 + t, w / 2.0 + 0.19, h]));
    let mut b = Builder::new(name)
        .link("carcass", &parts)
        .fixed("mount", "frame", "carcass", [0.0; 3]);
    let q0 = [-0.04, 0.05, -0.02];
    for (i, &q) in q0.iter().enumerate() {
        let link = format!("drawer{i}");
        let handle = format!("handle{i}");
        let z0 = t + i as f64 * slot;
        b = b
            .link(
                &link,
                &[(
                    [-d / 2.0 + t + 0.004, -w / 2.0 + t + 0.003, 0.003],
                    [d / 2.0, w / 2.0 - t - 0.003, slot - 0.003],
                )],
            )
            .link(&handle, &[([0.0, -0.04, -0.008], [0.02, 0.04, 0.008])])
            .moving(
                &format!("slide{i}"),
                PRI,
                "frame",
                &link,
                [0.0, 0.0, z0],
                [1.0, 0.0, 0.0],
                (-0.1, 0.25),
                q,
            )
            .fixed(
                &format!("grip{i}"),
                &link,
                &handle,
                [d / 2.0, 0.0, slot / 2.0],
            );
    }
    let door_h = h - t;
    b = b
        .link("door_a", &[([0.001, 0.0, 0.0], [0.012, 0.095, door_h])])
        .link("door_b", &[([0.001, -0.095, 0.0], [0.012, 0.0, door_h])])
        .moving(
            "hinge_a",
            REV,
            "frame",
            "door_a",
            [d / 2.0, w / 2.0, t],
            [0.0, 0.0, -1.0],
            (-0.5, 1.5),
            -0.2,
        )
        .moving(
            "hinge_b",
            REV,
            "frame",
            "door_b",
            [d / 2.0, w / 2.0 + 0.19, t],
            [0.0, 0.0, 1.0],
            (-0.5, 1.5),
            0.3,
        )
        .link("lid", &[([0.0, -w / 2.0, 0.001], [d, w / 2.0, 0.012])])
        .moving(
            "lid_hinge",
            REV,
            "frame",
            "lid",
            [-d / 2.0, 0.0, h],
            [0.0, -1.0, 0.0],
            (-0.3, 1.5),
            -0.1,
        );
    b.build()
}
