use std::collections::BTreeMap;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    ExtractedInfo, MaterialClass, MaterialPrior, Proposer, ProposerError, StateContext,
    StateUpdate, UpdateAction,
};
use crate::asset::{project_to_limits, AssetModel, JointKind, JointSpec, Topology};
use crate::collision::{normal_of, ContactReport};
use crate::overlay::{
    default_dynamics, estimate_link_mass, shape_inertia, InitialPositions, JointModification,
    LinkModification, Overlay, Shape,
};

/// Guidance words that enable a spring on every active joint.
pub const SPRING_KEYWORDS: [&str; 2] = ["spring", "snap"];

const METAL_WORDS: [&str; 4] = ["steel", "metal", "aluminum", "brass"];
const RUBBER_WORDS: [&str; 2] = ["rubber", "grip"];

/// Material class from a free-text label, plastic unless a keyword matches.
pub fn classify_material(label: &str) -> MaterialClass {
    let l = label.to_ascii_lowercase();
    if METAL_WORDS.iter().any(|w| l.contains(w)) {
        MaterialClass::Metal
    } else if RUBBER_WORDS.iter().any(|w| l.contains(w)) {
        MaterialClass::Rubber
    } else {
        MaterialClass::Plastic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Largest final extent per object category, m.
    pub target_sizes: BTreeMap<String, f64>,
    pub default_category: String,
    /// At least two final extents must fit within this, m.
    pub gripper_limit: f64,
    pub spring_stiffness_revolute: f64,
    pub spring_stiffness_prismatic: f64,
    /// Fill ratio above which a watertight link is treated as solid.
    pub solid_fill_ratio: f64,
    pub hollow_solid: f64,
    pub hollow_shell: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            target_sizes: BTreeMap::from([("handheld".to_string(), 0.15)]),
            default_category: "handheld".into(),
            gripper_limit: 0.075,
            spring_stiffness_revolute: 0.5,
            spring_stiffness_prismatic: 200.0,
            solid_fill_ratio: 0.6,
            hollow_solid: 0.9,
            hollow_shell: 0.4,
        }
    }
}

impl HeuristicConfig {
    fn target_size(&self, model: &AssetModel) -> (String, f64) {
        let name = model.name.to_ascii_lowercase();
        let category = model
            .metadata
            .get("category")
            .map(|c| c.to_ascii_lowercase())
            .filter(|c| self.target_sizes.contains_key(c))
            .or_else(|| {
                self.target_sizes
                    .keys()
                    .find(|k| name.contains(k.as_str()))
                    .cloned()
            })
            .unwrap_or_else(|| self.default_category.clone());
        let size = self.target_sizes.get(&category).copied().unwrap_or(0.15);
        (category, size)
    }
}

/// Extents of the assembled asset at the zero configuration, from the
/// per-link bounding boxes.
pub(crate) fn assembled_extents(info: &ExtractedInfo) -> [f64; 3] {
    let model = &info.model;
    let topo = Topology::new(model);
    let poses = topo.link_poses(
        model,
        &crate::asset::JointConfig::new(),
        &Isometry3::identity(),
    );
    let mut lo = Point3::from([f64::INFINITY; 3]);
    let mut hi = Point3::from([f64::NEG_INFINITY; 3]);
    for (link, pose) in model.links.iter().zip(&poses) {
        let Some(a) = info.analyses.get(&link.name) else {
            continue;
        };
        for i in 0..8 {
            let c = Point3::new(
                if i & 1 == 0 {
                    a.bbox_min[0]
                } else {
                    a.bbox_max[0]
                },
                if i & 2 == 0 {
                    a.bbox_min[1]
                } else {
                    a.bbox_max[1]
                },
                if i & 4 == 0 {
                    a.bbox_min[2]
                } else {
                    a.bbox_max[2]
                },
            );
            let w = pose * c;
            lo = lo.inf(&w);
            hi = hi.sup(&w);
        }
    }
    if lo.x > hi.x {
        return [0.0; 3];
    }
    let e = hi - lo;
    [e.x, e.y, e.z]
}

fn round_sig(v: f64) -> String {
    format!("{v:.4}")
}

/// Deterministic proposer built from fixed tables.
#[derive(Debug, Clone, Default)]
pub struct HeuristicProposer {
    pub config: HeuristicConfig,
}

impl HeuristicProposer {
    pub fn new(config: HeuristicConfig) -> Self {
        HeuristicProposer { config }
    }

    fn scale(&self, info: &ExtractedInfo, notes: &mut Vec<String>) -> f64 {
        let dims = assembled_extents(info);
        let mut sorted = dims;
        sorted.sort_by(f64::total_cmp);
        let (category, target) = self.config.target_size(&info.model);
        if sorted[2] <= 0.0 {
            notes.push("SIZE REASONING: no mesh extents available; scale left at 1.".into());
            return 1.0;
        }
        let mut s = target / sorted[2];
        if sorted[1] > 0.0 {
            s = s.min(self.config.gripper_limit / sorted[1]);
        }
        let fin = dims.map(|d| d * s);
        notes.push(format!(
            "SIZE REASONING: Typical real-world {category} ~= {} m largest extent. Current dims [{}x{}x{}] m. Scale s={}. Final dims [{}x{}x{}] m.",
            target,
            round_sig(dims[0]),
            round_sig(dims[1]),
            round_sig(dims[2]),
            s,
            round_sig(fin[0]),
            round_sig(fin[1]),
            round_sig(fin[2]),
        ));
        s
    }

    fn initial_positions(&self, info: &ExtractedInfo) -> Option<InitialPositions> {
        let g = info.guidance.as_deref()?.to_ascii_lowercase();
        let (word, pick): (&str, fn(f64, f64) -> f64) =
            if g.contains("half-open") || g.contains("half open") {
                ("half-open", |lo, hi| 0.5 * (lo + hi))
            } else if g.contains("closed") {
                ("closed", |lo, _| lo)
            } else if g.contains("open") {
                ("open", |_, hi| hi)
            } else {
                return None;
            };
        let mut out = InitialPositions::default();
        for j in info.model.active_joints() {
            if let (JointKind::Revolute | JointKind::Prismatic, Some(l)) = (j.kind, j.limits) {
                out.positions.insert(j.name.clone(), pick(l.lower, l.upper));
            }
        }
        if out.positions.is_empty() {
            return None;
        }
        out.extra.insert(
            "_reasoning".into(),
            Value::from(format!(
                "guidance requests a {word} state; limited joints placed accordingly"
            )),
        );
        Some(out)
    }
}

/// Velocity of `point` per unit rate of `joint`, world frame.
fn point_jacobian(
    poses: &[Isometry3<f64>],
    topo: &Topology,
    joint: &JointSpec,
    point: &Point3<f64>,
) -> Vector3<f64> {
    let parent = poses[topo.link_index[&joint.parent]];
    let frame = parent * joint.origin.to_isometry();
    let axis = frame.rotation * joint.axis_vector();
    match joint.kind {
        JointKind::Prismatic => axis,
        JointKind::Revolute | JointKind::Continuous => {
            axis.cross(&(point - Point3::from(frame.translation.vector)))
        }
        JointKind::Fixed => Vector3::zeros(),
    }
}

fn moves(model: &AssetModel, joint: &str, link: &str) -> bool {
    model.root_path(link).iter().any(|j| j.name == joint)
}

/// Rate at which moving `joint` opens the deepest contact of the worst pair.
fn separation_rate(
    model: &AssetModel,
    report: &ContactReport,
    joint: &JointSpec,
    poses: &[Isometry3<f64>],
    topo: &Topology,
) -> f64 {
    let Some(worst) = report.per_pair_penetration.first() else {
        return 0.0;
    };
    let Some(c) = report
        .contacts
        .iter()
        .filter(|c| c.pair == worst.pair)
        .min_by(|x, y| x.signed_separation.total_cmp(&y.signed_separation))
    else {
        return 0.0;
    };
    let p = Point3::from(c.point);
    let v = point_jacobian(poses, topo, joint, &p);
    let n = normal_of(c);
    let on_a = moves(model, &joint.name, &c.pair.a);
    let on_b = c
        .pair
        .b
        .as_deref()
        .is_some_and(|b| moves(model, &joint.name, b));
    match (on_a, on_b) {
        (true, false) => v.dot(&n),
        (false, true) => -v.dot(&n),
        _ => 0.0,
    }
}

/// Step as a fraction of joint range, by penetration band.
fn step_fraction(phi: f64) -> f64 {
    if phi > 0.02 {
        0.10
    } else if phi < 0.01 {
        0.02
    } else {
        0.05
    }
}

impl Proposer for HeuristicProposer {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn propose_overlay(&self, info: &ExtractedInfo) -> Result<Overlay, ProposerError> {
        let model = &info.model;
        for l in &model.links {
            let has_mesh = l
                .visuals
                .iter()
                .chain(&l.collisions)
                .any(|g| g.mesh_filename().is_some());
            if has_mesh && !info.analyses.contains_key(&l.name) {
                return Err(ProposerError::MissingAnalysis(l.name.clone()));
            }
        }
        let cfg = &self.config;
        let mut notes = vec![
            "PROVENANCE: heuristic proposer; materials from semantic keywords, not visuals."
                .to_string(),
        ];
        let s = self.scale(info, &mut notes);
        let mut overlay = Overlay::default();
        overlay.global_modifications.uniform_scale_factor = s;

        let mut mass_notes = Vec::new();
        for link in &model.links {
            let Some(a) = info.analyses.get(&link.name) else {
                continue;
            };
            let label = info.semantics.label(&link.name).unwrap_or(&link.name);
            let prior = MaterialPrior::of(classify_material(label));
            let eta = if a.watertight && a.fill_ratio() > cfg.solid_fill_ratio {
                cfg.hollow_solid
            } else {
                cfg.hollow_shell
            };
            let Ok(mass) = estimate_link_mass(a.volume, prior.default_density, s, eta) else {
                notes.push(format!("UNCERTAINTIES/WARNINGS: link {} has no usable volume; left to validator defaults.", link.name));
                continue;
            };
            let dims = a.bbox.map(|d| d * s);
            let floor = (dims.iter().cloned().fold(0.0, f64::max) * 1e-3).max(1e-6);
            let [w, h, d] = dims.map(|x| x.max(floor));
            let inertia = shape_inertia(mass, Shape::Box { w, h, d })?;
            mass_notes.push(format!(
                "{}: {}*{}*{}^3*{} = {} kg",
                link.name, a.volume, prior.default_density, s, eta, mass
            ));
            let mut entry = LinkModification {
                mass: Some(mass),
                inertia: Some(inertia.into()),
                center_of_mass: Some(a.center_of_mass.map(|c| c * s)),
                ..Default::default()
            };
            entry.extra.insert("_action".into(), Value::from("new"));
            entry.extra.insert(
                "_visual_notes".into(),
                Value::from(format!(
                    "label '{label}' -> {:?} ({} kg/m^3); hollow factor {eta} ({})",
                    prior.class,
                    prior.default_density,
                    if eta == cfg.hollow_solid {
                        "solid"
                    } else {
                        "shell"
                    }
                )),
            );
            overlay.link_modifications.insert(link.name.clone(), entry);
        }
        if !mass_notes.is_empty() {
            notes.push(format!("MASS CALCULATIONS: {}", mass_notes.join("; ")));
        }
        notes.push(
            "INERTIA ASSUMPTIONS: solid box over each scaled bounding box, off-diagonals 0.".into(),
        );

        let spring = info
            .guidance
            .as_deref()
            .map(|g| g.to_ascii_lowercase())
            .is_some_and(|g| SPRING_KEYWORDS.iter().any(|w| g.contains(w)));
        for j in model.active_joints() {
            let (beta, mu) = default_dynamics(j.kind);
            let k = match (spring, j.kind) {
                (false, _) => 0.0,
                (true, JointKind::Prismatic) => cfg.spring_stiffness_prismatic,
                (true, _) => cfg.spring_stiffness_revolute,
            };
            let mut entry = JointModification::triplet(beta, mu, k);
            entry.extra.insert("_action".into(), Value::from("new"));
            overlay.joint_modifications.insert(j.name.clone(), entry);
        }
        notes.push(format!(
            "JOINT DYNAMICS: PASSIVE defaults (revolute 0.15 N*m*s/rad, 0.01 N*m; prismatic 1.5 N*s/m, 0.5 N); stiffness {}.",
            if spring { "enabled by spring guidance" } else { "0.0" }
        ));
        overlay.initial_joint_positions = self.initial_positions(info);
        if overlay.initial_joint_positions.is_some() {
            notes
                .push("STATE CONFIGURATION: state word in guidance mapped to joint limits.".into());
        }
        notes.push("UNIT CHECK: all angular values in radians.".into());
        overlay.validation_notes = notes;
        Ok(overlay)
    }

    fn propose_state_update(&self, ctx: &StateContext<'_>) -> Result<StateUpdate, ProposerError> {
        let phi = ctx.report.total;
        if phi <= ctx.tolerance {
            return Ok(StateUpdate::approve(format!(
                "penetration {phi:.6} m within tolerance"
            )));
        }
        if ctx.focus.is_empty() {
            return Err(ProposerError::NoProposal { phi });
        }
        let model = ctx.model;
        let topo = Topology::new(model);
        let poses = topo.link_poses(model, ctx.q, &Isometry3::identity());
        let joints: Vec<&JointSpec> = ctx.focus.iter().filter_map(|n| model.joint(n)).collect();
        let Some(&first) = joints.first() else {
            return Err(ProposerError::NoProposal { phi });
        };
        let (joint, rate) = joints
            .iter()
            .map(|j| (*j, separation_rate(model, ctx.report, j, &poses, &topo)))
            .find(|(_, r)| r.abs() > 1e-9)
            .unwrap_or((first, 0.0));

        let (lo, hi) = joint.bounds().expect("active joint has bounds");
        let range = hi - lo;
        let q = ctx.q.get(&joint.name);
        let mut sign = if rate != 0.0 {
            rate.signum()
        } else if q - lo < hi - q {
            1.0
        } else {
            -1.0
        };
        if ctx.rejections % 2 == 1 {
            sign = -sign;
        }
        let mag = step_fraction(phi) * range;
        let try_delta = |d: f64| {
            let moved = ctx.q.clone().with(joint.name.clone(), q + d);
            project_to_limits(&moved, model).get(&joint.name) - q
        };
        let mut delta = sign * mag;
        if try_delta(delta).abs() < 1e-12 {
            delta = -delta;
        }
        let worst = ctx
            .report
            .per_pair_penetration
            .first()
            .map(|p| p.pair.to_string())
            .unwrap_or_default();
        Ok(StateUpdate {
            approved: false,
            state_ok: true,
            action: UpdateAction::CollisionReduction,
            joint_deltas: BTreeMap::from([(joint.name.clone(), delta)]),
            reason: format!("targeting {worst}: move {} by {delta:+.6}", joint.name),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::{GeometryRef, JointConfig, JointLimits, LinkSpec, SemanticMap};
    use crate::collision::CollisionModel;
    use crate::mesh::{analyze_mesh, MeshStore, TriMesh};
    use crate::overlay::validate_overlay;

    fn single_link_info(guidance: Option<&str>) -> ExtractedInfo {
        let mut link = LinkSpec::new("body");
        link.visuals.push(GeometryRef::mesh("cube.obj"));
        let model = AssetModel::new("thing", vec![link], vec![]).unwrap();
        let cube = TriMesh::cuboid([0.0; 3], [0.1; 3]);
        ExtractedInfo {
            model,
            semantics: SemanticMap::default(),
            analyses: BTreeMap::from([("body".to_string(), analyze_mesh(&cube))]),
            views: None,
            guidance: guidance.map(str::to_string),
        }
    }

    fn hinge_info(guidance: Option<&str>) -> (ExtractedInfo, MeshStore) {
        let mut base = LinkSpec::new("base");
        base.visuals.push(GeometryRef::mesh("base.obj"));
        let mut lid = LinkSpec::new("lid");
        lid.visuals.push(GeometryRef::mesh("lid.obj"));
        let mut j = JointSpec::new("hinge", JointKind::Revolute, "base", "lid");
        j.origin.xyz = [0.0, 0.0, 0.05];
        j.axis = [0.0, 1.0, 0.0];
        j.limits = Some(JointLimits::new(-0.5, 1.5));
        let model = AssetModel::new("box", vec![base, lid], vec![j]).unwrap();
        let mut store = MeshStore::default();
        store.insert(
            "base.obj",
            TriMesh::cuboid([-0.1, -0.05, -0.05], [0.0, 0.05, 0.05]),
        );
        store.insert(
            "lid.obj",
            TriMesh::cuboid([0.0, -0.05, 0.0], [0.1, 0.05, 0.01]),
        );
        let info = ExtractedInfo::extract(
            model,
            SemanticMap::default(),
            &store,
            guidance.map(str::to_string),
            None,
        )
        .unwrap();
        (info, store)
    }

    #[test]
    fn plastic_mass_example() {
        // 0.001 m³ cube of ABS, solid, at scale 1.
        let mut info = single_link_info(None);
        let a = info.analyses.get_mut("body").unwrap();
        a.volume = 0.001;
        a.bbox = [0.1; 3];
        let p = HeuristicProposer::new(HeuristicConfig {
            target_sizes: BTreeMap::from([("handheld".into(), 0.1)]),
            gripper_limit: 0.1,
            ..Default::default()
        });
        let o = p.propose_overlay(&info).unwrap();
        assert_eq!(o.scale(), 1.0);
        let m = o.link_modifications["body"].mass.unwrap();
        assert!((m - 0.936).abs() < 1e-12, "{m}");
    }

    #[test]
    fn revolute_defaults_and_spring() {
        let (info, _) = hinge_info(None);
        let o = HeuristicProposer::default().propose_overlay(&info).unwrap();
        let h = &o.joint_modifications["hinge"];
        assert_eq!(
            (h.damping, h.friction, h.stiffness),
            (Some(0.15), Some(0.01), Some(0.0))
        );
        let (info, _) = hinge_info(Some("spring behavior in its joint"));
        let o = HeuristicProposer::default().propose_overlay(&info).unwrap();
        let k = o.joint_modifications["hinge"].stiffness.unwrap();
        assert!((0.05..=2.0).contains(&k));
    }

    #[test]
    fn gripper_constraint_after_scaling() {
        let (info, _) = hinge_info(None);
        let o = HeuristicProposer::default().propose_overlay(&info).unwrap();
        let mut dims = assembled_extents(&info).map(|d| d * o.scale());
        dims.sort_by(f64::total_cmp);
        assert!(dims[1] <= 0.075 + 1e-12, "{dims:?}");
        assert!(dims[2] <= 0.15 + 1e-12);
        validate_overlay(&o, &info.model).unwrap();
    }

    #[test]
    fn material_keywords() {
        assert_eq!(classify_material("Steel handle"), MaterialClass::Metal);
        assert_eq!(classify_material("rubber_foot"), MaterialClass::Rubber);
        assert_eq!(classify_material("lid"), MaterialClass::Plastic);
    }

    #[test]
    fn state_words_map_to_limits() {
        let (info, _) = hinge_info(Some("make the lid open"));
        let o = HeuristicProposer::default().propose_overlay(&info).unwrap();
        assert_eq!(o.initial_joint_positions.unwrap().positions["hinge"], 1.5);
        let (info, _) = hinge_info(Some("stays where placed"));
        assert!(HeuristicProposer::default()
            .propose_overlay(&info)
            .unwrap()
            .initial_joint_positions
            .is_none());
    }

    fn ctx_for<'a>(
        model: &'a AssetModel,
        q: &'a JointConfig,
        report: &'a ContactReport,
        focus: &'a [String],
        rejections: usize,
    ) -> StateContext<'a> {
        StateContext {
            model,
            semantics: None,
            store: None,
            q,
            target: q,
            report,
            focus,
            hint: "",
            iteration: 0,
            rejections,
            tolerance: 0.002,
        }
    }

    #[test]
    fn state_update_bands() {
        let (info, store) = hinge_info(None);
        let model = &info.model;
        let _ = store;
        let focus = vec!["hinge".to_string()];
        let q = JointConfig::new().with("hinge", 0.3);
        let mut report = ContactReport {
            total: 0.0015,
            ..Default::default()
        };
        let u = HeuristicProposer::default()
            .propose_state_update(&ctx_for(model, &q, &report, &focus, 0))
            .unwrap();
        assert!(u.approved && u.joint_deltas.is_empty());
        report.total = 0.05;
        let u = HeuristicProposer::default()
            .propose_state_update(&ctx_for(model, &q, &report, &focus, 0))
            .unwrap();
        assert!((u.joint_deltas["hinge"].abs() - 0.2).abs() < 1e-12);
        report.total = 0.03;
        let err =
            HeuristicProposer::default().propose_state_update(&ctx_for(model, &q, &report, &[], 0));
        assert!(matches!(err, Err(ProposerError::NoProposal { .. })));
    }

    #[test]
    fn delta_sign_opens_the_lid() {
        // Thin lid slab sunk into the top of the base block.
        let mut base = LinkSpec::new("base");
        base.collisions.push(GeometryRef::mesh("base.obj"));
        let mut lid = LinkSpec::new("lid");
        lid.collisions.push(GeometryRef::mesh("lid.obj"));
        let mut j = JointSpec::new("hinge", JointKind::Revolute, "base", "lid");
        j.axis = [0.0, 1.0, 0.0];
        j.limits = Some(JointLimits::new(-1.0, 1.0));
        let model = AssetModel::new("box", vec![base, lid], vec![j]).unwrap();
        let mut store = MeshStore::default();
        store.insert(
            "base.obj",
            TriMesh::cuboid([0.0, -0.05, -0.1], [0.1, 0.05, 0.0]),
        );
        store.insert(
            "lid.obj",
            TriMesh::cuboid([0.0, -0.05, -0.02], [0.1, 0.05, 0.0]),
        );
        let cm = CollisionModel::from_hulls(
            &model,
            vec![
                vec![crate::mesh::convex_hull(store.get("base.obj").unwrap()).unwrap()],
                vec![crate::mesh::convex_hull(store.get("lid.obj").unwrap()).unwrap()],
            ],
            vec![],
        );
        // Adjacent links are excluded, so compute the pair's contact directly.
        assert!(cm.pairs.is_empty());
        let q = JointConfig::new().with("hinge", 0.0);
        let world = cm.world_hulls(&model, &q, &Isometry3::identity());
        let p = crate::collision::proximity(&world[1][0], &world[0][0]);
        assert!(p.separation < 0.0);
        let report = ContactReport {
            contacts: vec![crate::collision::Contact {
                pair: crate::collision::LinkPair::links("lid", "base"),
                point: [p.point.x, p.point.y, p.point.z],
                normal: [p.normal.x, p.normal.y, p.normal.z],
                signed_separation: p.separation,
            }],
            per_pair_penetration: vec![crate::collision::PairPenetration {
                pair: crate::collision::LinkPair::links("lid", "base"),
                depth: -p.separation,
            }],
            total: -p.separation,
        };
        let focus = vec!["hinge".to_string()];
        let u = HeuristicProposer::default()
            .propose_state_update(&ctx_for(&model, &q, &report, &focus, 0))
            .unwrap();
        let d = u.joint_deltas["hinge"];
        // Rotating about +y by a negative angle lifts points at x > 0.
        assert!(d < 0.0, "{d}");
        let moved = q.clone().with("hinge", d);
        let world = cm.world_hulls(&model, &moved, &Isometry3::identity());
        let p2 = crate::collision::proximity(&world[1][0], &world[0][0]);
        assert!(p2.separation > p.separation);
        let u = HeuristicProposer::default()
            .propose_state_update(&ctx_for(&model, &q, &report, &focus, 1))
            .unwrap();
        assert!(u.joint_deltas["hinge"] > 0.0);
    }

    #[test]
    fn overlay_is_pure() {
        let (info, _) = hinge_info(Some("open"));
        let p = HeuristicProposer::default();
        assert_eq!(
            p.propose_overlay(&info).unwrap(),
            p.propose_overlay(&info).unwrap()
        );
    }
}
