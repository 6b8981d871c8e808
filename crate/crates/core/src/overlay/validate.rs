use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    check_inertia, InertiaSpec, InitialPositions, JointModification, LimitSpec, LinkModification,
    Overlay, OverlayError, VALIDATED_MARKER,
};
use crate::asset::{AssetModel, Geometry, Inertia, JointDynamics, JointKind, JointLimits};

/// Mass given to links the overlay leaves out, kg.
pub const MINIMAL_MASS: f64 = 1e-3;
/// Diagonal inertia given to links the overlay leaves out, kg·m².
pub const MINIMAL_INERTIA: f64 = 1e-6;
/// Extra room added past a state that falls outside its joint limits.
const LIMIT_SLACK: f64 = 1e-6;

/// A non-fatal note about something the validator filled in or changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Passive damping and friction used when neither overlay nor model gives one.
pub fn default_dynamics(kind: JointKind) -> (f64, f64) {
    match kind {
        JointKind::Prismatic => (1.5, 0.5),
        _ => (0.15, 0.01),
    }
}

fn check_scale(s: f64) -> Result<(), OverlayError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(OverlayError::invalid(
            "global_modifications.uniform_scale_factor",
            format!("must be positive and finite, got {s}"),
        ));
    }
    Ok(())
}

fn minimal_link(diags: &mut Vec<Diagnostic>, path: &str, why: &str) -> (f64, InertiaSpec) {
    diags.push(Diagnostic::new(
        path,
        format!(
            "{why}; assigned minimal mass {MINIMAL_MASS} kg and inertia diag({MINIMAL_INERTIA})"
        ),
    ));
    (
        MINIMAL_MASS,
        Inertia::diagonal(MINIMAL_INERTIA, MINIMAL_INERTIA, MINIMAL_INERTIA).into(),
    )
}

/// Brings an overlay into a form [`apply_overlay`] can use without further checks.
///
/// Every link ends with a mass and a feasible inertia, every active joint with
/// a full (β, μ, k) triplet and its final limits, and every initial position
/// inside those limits. The output is marked so a second pass changes nothing.
pub fn validate_overlay(
    overlay: &Overlay,
    model: &AssetModel,
) -> Result<(Overlay, Vec<Diagnostic>), OverlayError> {
    let s = overlay.scale();
    check_scale(s)?;
    let rescale = !overlay.is_validated();
    let mut out = overlay.clone();
    let mut diags = Vec::new();

    if rescale && s != 1.0 {
        for link in &model.links {
            let scaled = link
                .visuals
                .iter()
                .chain(&link.collisions)
                .filter_map(|g| g.mesh_filename())
                .find(|(_, sc)| *sc != [1.0; 3]);
            if let Some((file, sc)) = scaled {
                diags.push(Diagnostic::new(
                    format!("link_modifications.{}", link.name),
                    format!("mesh `{file}` already carries scale {sc:?}; the global factor {s} multiplies it"),
                ));
            }
        }
    }

    // Links.
    for name in overlay.link_modifications.keys() {
        if model.link(name).is_none() {
            diags.push(Diagnostic::new(
                format!("link_modifications.{name}"),
                "unknown link dropped",
            ));
            out.link_modifications.remove(name);
        }
    }
    for link in &model.links {
        let path = format!("link_modifications.{}", link.name);
        let Some(entry) = out.link_modifications.get_mut(&link.name) else {
            let (mass, inertia) = minimal_link(&mut diags, &path, "no overlay entry");
            out.link_modifications.insert(
                link.name.clone(),
                LinkModification {
                    mass: Some(mass),
                    inertia: Some(inertia),
                    ..Default::default()
                },
            );
            continue;
        };
        if let Some(m) = entry.mass {
            if !(m.is_finite() && m > 0.0) {
                return Err(OverlayError::invalid(
                    format!("{path}.mass"),
                    format!("must be positive and finite, got {m}"),
                ));
            }
        }
        let Some(spec) = entry.inertia else {
            let (mass, inertia) = minimal_link(&mut diags, &path, "inertia missing");
            entry.mass = Some(mass);
            entry.inertia = Some(inertia);
            continue;
        };
        if entry.mass.is_none() {
            let (mass, _) = minimal_link(&mut diags, &format!("{path}.mass"), "mass missing");
            entry.mass = Some(mass);
        }
        let tensor: Inertia = spec.into();
        let m = tensor.to_matrix();
        if m.iter().any(|v| !v.is_finite()) {
            return Err(OverlayError::invalid(
                format!("{path}.inertia"),
                "components must be finite",
            ));
        }
        let check = check_inertia(&m)?;
        let mut fixed = check.corrected;
        if check.offdiag_dropped {
            diags.push(Diagnostic::new(
                format!("{path}.inertia"),
                "off-diagonal term exceeded sqrt(I_aa*I_bb) and was set to 0",
            ));
        }
        let still_spd = check_inertia(&fixed.to_matrix())?.spd_ok;
        if !still_spd {
            diags.push(Diagnostic::new(
                format!("{path}.inertia"),
                format!(
                    "not positive definite (moments {:?}); replaced by minimal inertia",
                    check.principal_moments
                ),
            ));
            fixed = Inertia::diagonal(MINIMAL_INERTIA, MINIMAL_INERTIA, MINIMAL_INERTIA);
        } else if !check.triangle_ok {
            diags.push(Diagnostic::new(
                format!("{path}.inertia"),
                format!(
                    "principal moments {:?} violate the triangle inequality",
                    check.principal_moments
                ),
            ));
        }
        entry.inertia = Some(fixed.into());
    }

    // Joints.
    for name in overlay.joint_modifications.keys() {
        match model.joint(name) {
            Some(j) if j.kind.is_active() => {}
            Some(_) => {
                diags.push(Diagnostic::new(
                    format!("joint_modifications.{name}"),
                    "fixed joint entry dropped",
                ));
                out.joint_modifications.remove(name);
            }
            None => {
                diags.push(Diagnostic::new(
                    format!("joint_modifications.{name}"),
                    "unknown joint dropped",
                ));
                out.joint_modifications.remove(name);
            }
        }
    }
    for joint in model.active_joints() {
        let path = format!("joint_modifications.{}", joint.name);
        let entry = out
            .joint_modifications
            .entry(joint.name.clone())
            .or_default();
        for (field, v) in [
            ("damping", entry.damping),
            ("friction", entry.friction),
            ("stiffness", entry.stiffness),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(OverlayError::invalid(
                        format!("{path}.{field}"),
                        format!("must be finite and non-negative, got {v}"),
                    ));
                }
            }
        }
        let model_dyn = joint.dynamics.unwrap_or_default();
        let (beta, mu) = default_dynamics(joint.kind);
        if entry.damping.is_none() {
            let v = model_dyn.damping.unwrap_or(beta);
            diags.push(Diagnostic::new(
                format!("{path}.damping"),
                format!("missing; set to {v}"),
            ));
            entry.damping = Some(v);
        }
        if entry.friction.is_none() {
            let v = model_dyn.friction.unwrap_or(mu);
            diags.push(Diagnostic::new(
                format!("{path}.friction"),
                format!("missing; set to {v}"),
            ));
            entry.friction = Some(v);
        }
        if entry.stiffness.is_none() {
            diags.push(Diagnostic::new(
                format!("{path}.stiffness"),
                "missing; set to 0",
            ));
            entry.stiffness = Some(0.0);
        }
        if entry.limit.is_none() {
            if let Some(l) = joint.limits {
                let k = if joint.kind == JointKind::Prismatic {
                    s
                } else {
                    1.0
                };
                entry.limit = Some(LimitSpec {
                    lower: l.lower * k,
                    upper: l.upper * k,
                });
            }
        }
        if let Some(l) = entry.limit {
            if !(l.lower.is_finite() && l.upper.is_finite()) || l.lower > l.upper {
                return Err(OverlayError::invalid(
                    format!("{path}.limit"),
                    format!("need finite lower <= upper, got [{}, {}]", l.lower, l.upper),
                ));
            }
        }
    }

    // Initial state: overlay positions, else the model's documented state.
    let mut positions = match &overlay.initial_joint_positions {
        Some(p) => p.clone(),
        None => match &model.documented_initial_state {
            Some(doc) => {
                diags.push(Diagnostic::new(
                    "initial_joint_positions",
                    "taken from the documented initial state",
                ));
                InitialPositions {
                    positions: doc.clone(),
                    extra: BTreeMap::new(),
                }
            }
            None => {
                out.extra.insert(VALIDATED_MARKER.into(), Value::Bool(true));
                return Ok((out, diags));
            }
        },
    };
    let from_model = overlay.initial_joint_positions.is_none();
    let names: Vec<String> = positions.positions.keys().cloned().collect();
    for name in names {
        let path = format!("initial_joint_positions.{name}");
        let joint = match model.joint(&name) {
            Some(j) if j.kind.is_active() => j,
            _ => {
                diags.push(Diagnostic::new(&path, "not an active joint; dropped"));
                positions.positions.remove(&name);
                continue;
            }
        };
        let mut v = positions.positions[&name];
        if !v.is_finite() {
            return Err(OverlayError::invalid(
                &path,
                format!("must be finite, got {v}"),
            ));
        }
        if joint.kind == JointKind::Prismatic && (rescale || from_model) {
            v *= s;
        }
        positions.positions.insert(name.clone(), v);
        let entry = out
            .joint_modifications
            .get_mut(&name)
            .expect("active joint entry");
        if let Some(l) = entry.limit.as_mut() {
            if v > l.upper {
                let old = l.upper;
                l.upper = v + LIMIT_SLACK;
                diags.push(Diagnostic::new(
                    format!("joint_modifications.{name}.limit"),
                    format!(
                        "upper limit raised from {old} to {} to contain initial state {v}",
                        l.upper
                    ),
                ));
            } else if v < l.lower {
                let old = l.lower;
                l.lower = v - LIMIT_SLACK;
                diags.push(Diagnostic::new(
                    format!("joint_modifications.{name}.limit"),
                    format!(
                        "lower limit lowered from {old} to {} to contain initial state {v}",
                        l.lower
                    ),
                ));
            }
        }
    }
    out.initial_joint_positions = Some(positions);
    out.extra.insert(VALIDATED_MARKER.into(), Value::Bool(true));
    Ok((out, diags))
}

fn scale_geometry(g: &mut Geometry, s: f64) {
    if let Geometry::Mesh { scale, .. } = g {
        for c in scale.iter_mut() {
            *c *= s;
        }
    }
}

/// Produces the revised asset. Fields the overlay does not touch are copied
/// unchanged; with `s = 1` and empty maps the result equals the input.
pub fn apply_overlay(model: &AssetModel, overlay: &Overlay) -> Result<AssetModel, OverlayError> {
    let s = overlay.scale();
    check_scale(s)?;
    for name in overlay.link_modifications.keys() {
        if model.link(name).is_none() {
            return Err(OverlayError::UnknownLink(name.clone()));
        }
    }
    for name in overlay.joint_modifications.keys() {
        if model.joint(name).is_none() {
            return Err(OverlayError::UnknownJoint(name.clone()));
        }
    }
    if let Some(p) = &overlay.initial_joint_positions {
        for name in p.positions.keys() {
            if model.joint(name).is_none() {
                return Err(OverlayError::UnknownJoint(name.clone()));
            }
        }
    }

    let mut out = model.clone();
    for link in &mut out.links {
        for g in link.visuals.iter_mut().chain(link.collisions.iter_mut()) {
            g.origin = g.origin.scaled(s);
            scale_geometry(&mut g.geometry, s);
        }
        if let Some(c) = link.center_of_mass.as_mut() {
            *c = c.map(|v| v * s);
        }
        if let Some(m) = overlay.link_modifications.get(&link.name) {
            if let Some(mass) = m.mass {
                link.mass = Some(mass);
            }
            if let Some(i) = m.inertia {
                link.inertia = Some(i.into());
                link.inertial_rpy = [0.0; 3];
            }
            if let Some(c) = m.center_of_mass {
                link.center_of_mass = Some(c);
            }
        }
    }
    for joint in &mut out.joints {
        joint.origin = joint.origin.scaled(s);
        let entry: Option<&JointModification> = overlay.joint_modifications.get(&joint.name);
        match (entry.and_then(|e| e.limit), joint.limits.as_mut()) {
            (Some(l), Some(lim)) => {
                lim.lower = l.lower;
                lim.upper = l.upper;
            }
            (Some(l), None) => joint.limits = Some(JointLimits::new(l.lower, l.upper)),
            (None, Some(lim)) if joint.kind == JointKind::Prismatic => {
                lim.lower *= s;
                lim.upper *= s;
            }
            _ => {}
        }
        if let Some(e) = entry {
            let d = joint.dynamics.get_or_insert_with(JointDynamics::default);
            d.damping = e.damping.or(d.damping);
            d.friction = e.friction.or(d.friction);
            d.stiffness = e.stiffness.or(d.stiffness);
        }
    }
    let prismatic = |m: &AssetModel, name: &str| {
        m.joint(name)
            .is_some_and(|j| j.kind == JointKind::Prismatic)
    };
    match &overlay.initial_joint_positions {
        Some(p) => {
            let k = if overlay.is_validated() { 1.0 } else { s };
            out.documented_initial_state = Some(
                p.positions
                    .iter()
                    .map(|(n, &v)| (n.clone(), if prismatic(model, n) { v * k } else { v }))
                    .collect(),
            );
        }
        None => {
            if let Some(doc) = out.documented_initial_state.as_mut() {
                for (n, v) in doc.iter_mut() {
                    if prismatic(model, n) {
                        *v *= s;
                    }
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::{GeometryRef, JointSpec, LinkSpec};

    fn hinge_slider() -> AssetModel {
        let mut base = LinkSpec::new("base");
        base.visuals.push(GeometryRef::mesh("base.obj"));
        let lid = LinkSpec::new("lid");
        let drawer = LinkSpec::new("drawer");
        let mut hinge = JointSpec::new("hinge", JointKind::Revolute, "base", "lid");
        hinge.origin.xyz = [0.0, 0.0, 0.2];
        hinge.axis = [0.0, 1.0, 0.0];
        hinge.limits = Some(JointLimits::new(0.0, 1.57));
        let mut slide = JointSpec::new("slide", JointKind::Prismatic, "base", "drawer");
        slide.limits = Some(JointLimits::new(0.0, 0.3));
        AssetModel::new("box", vec![base, lid, drawer], vec![hinge, slide]).unwrap()
    }

    #[test]
    fn missing_link_gets_minimal_inertials() {
        let model = hinge_slider();
        let (o, diags) = validate_overlay(&Overlay::default(), &model).unwrap();
        let l = &o.link_modifications["drawer"];
        assert_eq!(l.mass, Some(MINIMAL_MASS));
        assert_eq!(l.inertia, Some(Inertia::diagonal(1e-6, 1e-6, 1e-6).into()));
        assert!(diags.iter().any(|d| d.path == "link_modifications.drawer"));
    }

    #[test]
    fn existing_mesh_scale_is_noted() {
        let mut model = hinge_slider();
        if let Geometry::Mesh { scale, .. } = &mut model.links[0].visuals[0].geometry {
            *scale = [2.0; 3];
        }
        let mut o = Overlay::default();
        let (_, quiet) = validate_overlay(&o, &model).unwrap();
        assert!(quiet.iter().all(|d| !d.message.contains("multiplies")));
        o.global_modifications.uniform_scale_factor = 0.5;
        let (v, diags) = validate_overlay(&o, &model).unwrap();
        assert!(diags.iter().any(|d| d.message.contains("multiplies")));
        let applied = apply_overlay(&model, &v).unwrap();
        assert_eq!(applied.links[0].visuals[0].mesh_filename().unwrap().1, [1.0; 3]);
    }

    #[test]
    fn prismatic_limit_scaled() {
        let model = hinge_slider();
        let mut o = Overlay::default();
        o.global_modifications.uniform_scale_factor = 0.5;
        let (v, _) = validate_overlay(&o, &model).unwrap();
        assert_eq!(
            v.joint_modifications["slide"].limit,
            Some(LimitSpec {
                lower: 0.0,
                upper: 0.15
            })
        );
        assert_eq!(
            v.joint_modifications["hinge"].limit,
            Some(LimitSpec {
                lower: 0.0,
                upper: 1.57
            })
        );
        let applied = apply_overlay(&model, &v).unwrap();
        assert_eq!(applied.joint("slide").unwrap().limits.unwrap().upper, 0.15);
        assert_eq!(applied.joint("hinge").unwrap().origin.xyz, [0.0, 0.0, 0.1]);
        assert_eq!(
            applied.links[0].visuals[0].mesh_filename().unwrap().1,
            [0.5; 3]
        );
    }

    #[test]
    fn initial_state_widens_nearer_bound() {
        let model = hinge_slider();
        let o = Overlay::from_json(r#"{"initial_joint_positions": {"hinge": 1.6}}"#).unwrap();
        let (v, diags) = validate_overlay(&o, &model).unwrap();
        let lim = v.joint_modifications["hinge"].limit.unwrap();
        assert_eq!(lim.lower, 0.0);
        assert!((lim.upper - 1.6).abs() <= 1e-6 + 1e-15 && lim.upper >= 1.6);
        assert!(diags
            .iter()
            .any(|d| d.path == "joint_modifications.hinge.limit"));
    }

    #[test]
    fn triplet_completed() {
        let model = hinge_slider();
        let o = Overlay::from_json(
            r#"{"joint_modifications": {"hinge": {"damping": 0.3, "friction": 0.02}}}"#,
        )
        .unwrap();
        let (v, diags) = validate_overlay(&o, &model).unwrap();
        let h = &v.joint_modifications["hinge"];
        assert_eq!(
            (h.damping, h.friction, h.stiffness),
            (Some(0.3), Some(0.02), Some(0.0))
        );
        let p = &v.joint_modifications["slide"];
        assert_eq!(
            (p.damping, p.friction, p.stiffness),
            (Some(1.5), Some(0.5), Some(0.0))
        );
        assert!(diags
            .iter()
            .any(|d| d.path == "joint_modifications.hinge.stiffness"));
    }

    #[test]
    fn hard_rejects_carry_path() {
        let model = hinge_slider();
        let o = Overlay::from_json(r#"{"link_modifications": {"lid": {"mass": -1.0}}}"#).unwrap();
        match validate_overlay(&o, &model) {
            Err(OverlayError::Invalid { path, .. }) => {
                assert_eq!(path, "link_modifications.lid.mass")
            }
            other => panic!("{other:?}"),
        }
        let o =
            Overlay::from_json(r#"{"joint_modifications": {"hinge": {"damping": -0.1}}}"#).unwrap();
        match validate_overlay(&o, &model) {
            Err(OverlayError::Invalid { path, .. }) => {
                assert_eq!(path, "joint_modifications.hinge.damping")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_inertia_corrected() {
        let model = hinge_slider();
        let o = Overlay::from_json(
            r#"{"link_modifications": {"lid": {"mass": 1.0, "inertia": {"ixx": 1, "iyy": 1, "izz": 1, "ixy": 2}},
                                       "base": {"mass": 1.0, "inertia": {"ixx": -1, "iyy": 1, "izz": 1}}}}"#,
        )
        .unwrap();
        let (v, _) = validate_overlay(&o, &model).unwrap();
        assert_eq!(v.link_modifications["lid"].inertia.unwrap().ixy, 0.0);
        assert_eq!(
            v.link_modifications["base"].inertia.unwrap().ixx,
            MINIMAL_INERTIA
        );
    }

    #[test]
    fn validation_idempotent() {
        let model = hinge_slider();
        let o = Overlay::from_json(
            r#"{"global_modifications": {"uniform_scale_factor": 0.5},
                "initial_joint_positions": {"slide": 0.4, "hinge": "30deg"}}"#,
        )
        .unwrap();
        let (v1, _) = validate_overlay(&o, &model).unwrap();
        let (v2, _) = validate_overlay(&v1, &model).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(
            v1.initial_joint_positions.as_ref().unwrap().positions["slide"],
            0.2
        );
    }

    #[test]
    fn identity_overlay_leaves_model_unchanged() {
        let model = hinge_slider();
        assert_eq!(apply_overlay(&model, &Overlay::default()).unwrap(), model);
    }

    #[test]
    fn apply_rejects_unknown_references() {
        let model = hinge_slider();
        let mut o = Overlay::default();
        o.joint_modifications
            .insert("nope".into(), JointModification::triplet(0.1, 0.1, 0.0));
        assert_eq!(
            apply_overlay(&model, &o),
            Err(OverlayError::UnknownJoint("nope".into()))
        );
    }

    #[test]
    fn applied_dynamics_exact() {
        let model = hinge_slider();
        let mut o = Overlay::default();
        o.joint_modifications
            .insert("hinge".into(), JointModification::triplet(0.15, 0.01, 0.0));
        let (v, _) = validate_overlay(&o, &model).unwrap();
        let out = apply_overlay(&model, &v).unwrap();
        assert_eq!(
            out.joint("hinge").unwrap().dynamics,
            Some(JointDynamics::triplet(0.15, 0.01, 0.0))
        );
        let text = crate::asset::write_urdf(&out).unwrap();
        assert!(
            text.contains(r#"damping="0.15" friction="0.01" stiffness="0""#),
            "{text}"
        );
    }
}
