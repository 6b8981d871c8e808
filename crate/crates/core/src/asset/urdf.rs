use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{
    AssetError, AssetModel, Geometry, GeometryRef, Inertia, JointDynamics, JointKind, JointLimits,
    JointSpec, LinkSpec, Location, Pose,
};

/// Marker opening the comment block that records the documented initial state.
pub const INITIAL_STATE_TAG: &str = "artready:initial_state";

struct Ctx<'a> {
    doc: &'a Document<'a>,
    text: &'a str,
}

impl<'a> Ctx<'a> {
    fn loc(&self, node: Node) -> Location {
        let p = self.doc.text_pos_at(node.range().start);
        Location {
            line: p.row,
            col: p.col,
        }
    }

    fn raw(&self, node: Node) -> String {
        self.text[node.range()].to_string()
    }

    fn invalid(&self, node: Node, field: &str, message: impl Into<String>) -> AssetError {
        AssetError::InvalidValue {
            field: field.to_string(),
            message: message.into(),
            location: Some(self.loc(node)),
        }
    }

    fn attr_f64(&self, node: Node, name: &str) -> Result<Option<f64>, AssetError> {
        match node.attribute(name) {
            None => Ok(None),
            Some(s) => s
                .trim()
                .parse::<f64>()
                .map(Some)
                .map_err(|_| self.invalid(node, name, format!("expected a number, got `{s}`"))),
        }
    }

    fn attr_vec3(&self, node: Node, name: &str) -> Result<Option<[f64; 3]>, AssetError> {
        let Some(s) = node.attribute(name) else {
            return Ok(None);
        };
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(self.invalid(node, name, format!("expected three numbers, got `{s}`")));
        }
        let mut out = [0.0; 3];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| {
                self.invalid(node, name, format!("expected three numbers, got `{s}`"))
            })?;
        }
        Ok(Some(out))
    }

    fn required<'b>(&self, node: Node<'b, 'b>, name: &str) -> Result<&'b str, AssetError> {
        node.attribute(name).ok_or_else(|| {
            self.invalid(
                node,
                name,
                format!("<{}> is missing `{name}`", node.tag_name().name()),
            )
        })
    }

    fn origin(&self, node: Node) -> Result<Pose, AssetError> {
        Ok(Pose {
            xyz: self.attr_vec3(node, "xyz")?.unwrap_or([0.0; 3]),
            rpy: self.attr_vec3(node, "rpy")?.unwrap_or([0.0; 3]),
        })
    }
}

fn elements<'a, 'b>(node: Node<'a, 'b>) -> impl Iterator<Item = Node<'a, 'b>> {
    node.children().filter(|c| c.is_element())
}

/// Parses a URDF document into an [`AssetModel`].
///
/// Structural errors (dangling references, cycles, several roots) carry
/// the source location of the offending element.
pub fn parse_urdf(text: &str) -> Result<AssetModel, AssetError> {
    let doc = Document::parse(text).map_err(|e| {
        let p = e.pos();
        AssetError::Xml {
            message: e.to_string(),
            location: Some(Location {
                line: p.row,
                col: p.col,
            }),
        }
    })?;
    let ctx = Ctx { doc: &doc, text };
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(AssetError::Xml {
            message: format!(
                "root element is <{}>, expected <robot>",
                robot.tag_name().name()
            ),
            location: Some(ctx.loc(robot)),
        });
    }

    let mut metadata = BTreeMap::new();
    for ns in robot.namespaces() {
        if ns.name() == Some("xml") {
            continue;
        }
        let key = match ns.name() {
            Some(prefix) => format!("xmlns:{prefix}"),
            None => "xmlns".to_string(),
        };
        metadata.insert(key, ns.uri().to_string());
    }
    for a in robot.attributes() {
        if a.name() == "name" && a.namespace().is_none() {
            continue;
        }
        let key = match a.namespace().and_then(|ns| robot.lookup_prefix(ns)) {
            Some(prefix) if !prefix.is_empty() => format!("{prefix}:{}", a.name()),
            _ => a.name().to_string(),
        };
        metadata.insert(key, a.value().to_string());
    }

    let mut links = Vec::new();
    let mut joints = Vec::new();
    let mut extras = Vec::new();
    let mut link_loc: HashMap<String, Location> = HashMap::new();
    let mut joint_loc: HashMap<String, Location> = HashMap::new();
    let mut documented = None;

    for child in robot.children() {
        if child.is_comment() {
            if let Some(body) = child
                .text()
                .and_then(|t| t.trim_start().strip_prefix(INITIAL_STATE_TAG))
            {
                documented = Some(parse_state_block(&ctx, child, body)?);
            }
            continue;
        }
        if !child.is_element() {
            continue;
        }
        match child.tag_name().name() {
            "link" => {
                let link = parse_link(&ctx, child)?;
                if link_loc.insert(link.name.clone(), ctx.loc(child)).is_some() {
                    return Err(AssetError::DuplicateName {
                        kind: "link",
                        name: link.name,
                        location: Some(ctx.loc(child)),
                    });
                }
                links.push(link);
            }
            "joint" => {
                let joint = parse_joint(&ctx, child)?;
                if joint_loc
                    .insert(joint.name.clone(), ctx.loc(child))
                    .is_some()
                {
                    return Err(AssetError::DuplicateName {
                        kind: "joint",
                        name: joint.name,
                        location: Some(ctx.loc(child)),
                    });
                }
                joints.push(joint);
            }
            _ => extras.push(ctx.raw(child)),
        }
    }

    let mut model = AssetModel {
        name: robot.attribute("name").unwrap_or_default().to_string(),
        links,
        joints,
        root: String::new(),
        metadata,
        documented_initial_state: documented,
        extras,
    };
    // Reference errors first so a dangling child is not misreported as a second root.
    for j in &model.joints {
        for end in [&j.parent, &j.child] {
            if model.link(end).is_none() {
                return Err(AssetError::UnresolvedLink {
                    joint: j.name.clone(),
                    link: end.clone(),
                    location: joint_loc.get(&j.name).copied(),
                });
            }
        }
    }
    let attach = |err: AssetError| -> AssetError {
        match err {
            AssetError::CyclicJointGraph { joint, .. } => AssetError::CyclicJointGraph {
                location: joint_loc.get(&joint).copied(),
                joint,
            },
            AssetError::MultipleParents { link, .. } => AssetError::MultipleParents {
                location: link_loc.get(&link).copied(),
                link,
            },
            AssetError::InvalidValue {
                field,
                message,
                location: None,
            } => {
                let location = field
                    .strip_prefix("joint[")
                    .and_then(|r| r.split(']').next())
                    .and_then(|n| joint_loc.get(n).copied())
                    .or_else(|| {
                        field
                            .strip_prefix("link[")
                            .and_then(|r| r.split(']').next())
                            .and_then(|n| link_loc.get(n).copied())
                    });
                AssetError::InvalidValue {
                    field,
                    message,
                    location,
                }
            }
            other => other,
        }
    };
    for l in &model.links {
        if model.joints.iter().filter(|j| j.child == l.name).count() > 1 {
            return Err(attach(AssetError::MultipleParents {
                link: l.name.clone(),
                location: None,
            }));
        }
    }
    model.root = model.find_root().map_err(attach)?;
    model.validate().map_err(attach)?;
    Ok(model)
}

fn parse_state_block(
    ctx: &Ctx,
    node: Node,
    body: &str,
) -> Result<BTreeMap<String, f64>, AssetError> {
    let mut state = BTreeMap::new();
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| {
            ctx.invalid(
                node,
                INITIAL_STATE_TAG,
                format!("expected key=value, got `{line}`"),
            )
        })?;
        let v: f64 = v.trim().parse().map_err(|_| {
            ctx.invalid(
                node,
                INITIAL_STATE_TAG,
                format!("expected a number in `{line}`"),
            )
        })?;
        state.insert(k.trim().to_string(), v);
    }
    Ok(state)
}

fn parse_link(ctx: &Ctx, node: Node) -> Result<LinkSpec, AssetError> {
    let mut link = LinkSpec::new(ctx.required(node, "name")?);
    for child in elements(node) {
        match child.tag_name().name() {
            "inertial" => {
                for part in elements(child) {
                    match part.tag_name().name() {
                        "origin" => {
                            let pose = ctx.origin(part)?;
                            link.center_of_mass = Some(pose.xyz);
                            link.inertial_rpy = pose.rpy;
                        }
                        "mass" => link.mass = ctx.attr_f64(part, "value")?,
                        "inertia" => {
                            let get = |n: &str| ctx.attr_f64(part, n).map(|v| v.unwrap_or(0.0));
                            link.inertia = Some(Inertia {
                                ixx: get("ixx")?,
                                ixy: get("ixy")?,
                                ixz: get("ixz")?,
                                iyy: get("iyy")?,
                                iyz: get("iyz")?,
                                izz: get("izz")?,
                            });
                        }
                        _ => {}
                    }
                }
                if let Some(m) = link.mass {
                    if !(m.is_finite() && m > 0.0) {
                        return Err(ctx.invalid(
                            child,
                            "mass",
                            format!("mass must be positive, got {m}"),
                        ));
                    }
                }
            }
            "visual" => link.visuals.push(parse_geometry_ref(ctx, child)?),
            "collision" => link.collisions.push(parse_geometry_ref(ctx, child)?),
            _ => link.extras.push(ctx.raw(child)),
        }
    }
    Ok(link)
}

fn parse_geometry_ref(ctx: &Ctx, node: Node) -> Result<GeometryRef, AssetError> {
    let mut origin = Pose::default();
    let mut geometry = None;
    let mut extras = Vec::new();
    for child in elements(node) {
        match child.tag_name().name() {
            "origin" => origin = ctx.origin(child)?,
            "geometry" => {
                let shape = elements(child)
                    .next()
                    .ok_or_else(|| ctx.invalid(child, "geometry", "empty <geometry>"))?;
                geometry = Some(if shape.tag_name().name() == "mesh" {
                    Geometry::Mesh {
                        filename: ctx.required(shape, "filename")?.to_string(),
                        scale: ctx.attr_vec3(shape, "scale")?.unwrap_or([1.0; 3]),
                    }
                } else {
                    Geometry::Opaque(ctx.raw(shape))
                });
            }
            _ => extras.push(ctx.raw(child)),
        }
    }
    Ok(GeometryRef {
        name: node.attribute("name").map(str::to_string),
        origin,
        geometry: geometry.ok_or_else(|| {
            ctx.invalid(
                node,
                "geometry",
                format!("<{}> without <geometry>", node.tag_name().name()),
            )
        })?,
        extras,
    })
}

fn parse_joint(ctx: &Ctx, node: Node) -> Result<JointSpec, AssetError> {
    let name = ctx.required(node, "name")?;
    let kind = match ctx.required(node, "type")? {
        "revolute" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "continuous" => JointKind::Continuous,
        "fixed" => JointKind::Fixed,
        other => {
            return Err(ctx.invalid(node, "type", format!("unsupported joint type `{other}`")));
        }
    };
    let mut joint = JointSpec::new(name, kind, "", "");
    let mut parent = None;
    let mut child_link = None;
    for child in elements(node) {
        match child.tag_name().name() {
            "origin" => joint.origin = ctx.origin(child)?,
            "parent" => parent = Some(ctx.required(child, "link")?.to_string()),
            "child" => child_link = Some(ctx.required(child, "link")?.to_string()),
            "axis" => {
                let a = ctx.attr_vec3(child, "xyz")?.unwrap_or([1.0, 0.0, 0.0]);
                let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
                if !(n.is_finite() && n > 0.0) {
                    return Err(ctx.invalid(child, "axis", "joint axis must be non-zero"));
                }
                joint.axis = if (n - 1.0).abs() <= 1e-12 {
                    a
                } else {
                    [a[0] / n, a[1] / n, a[2] / n]
                };
            }
            "limit" if matches!(kind, JointKind::Revolute | JointKind::Prismatic) => {
                let lower = ctx.attr_f64(child, "lower")?.unwrap_or(0.0);
                let upper = ctx.attr_f64(child, "upper")?.unwrap_or(0.0);
                if lower > upper {
                    return Err(ctx.invalid(
                        child,
                        "limit",
                        format!("lower {lower} exceeds upper {upper}"),
                    ));
                }
                joint.limits = Some(JointLimits {
                    lower,
                    upper,
                    effort: ctx.attr_f64(child, "effort")?,
                    velocity: ctx.attr_f64(child, "velocity")?,
                });
            }
            "dynamics" => {
                joint.dynamics = Some(JointDynamics {
                    damping: ctx.attr_f64(child, "damping")?,
                    friction: ctx.attr_f64(child, "friction")?,
                    stiffness: ctx.attr_f64(child, "stiffness")?,
                });
            }
            _ => joint.extras.push(ctx.raw(child)),
        }
    }
    joint.parent = parent
        .ok_or_else(|| ctx.invalid(node, "parent", format!("joint `{name}` has no <parent>")))?;
    joint.child = child_link
        .ok_or_else(|| ctx.invalid(node, "child", format!("joint `{name}` has no <child>")))?;
    Ok(joint)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn v3(v: &[f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn write_origin(out: &mut String, indent: &str, pose: &Pose) {
    let _ = writeln!(
        out,
        "{indent}<origin xyz=\"{}\" rpy=\"{}\"/>",
        v3(&pose.xyz),
        v3(&pose.rpy)
    );
}

fn write_geometry_ref(out: &mut String, tag: &str, g: &GeometryRef) {
    match &g.name {
        Some(n) => {
            let _ = writeln!(out, "    <{tag} name=\"{}\">", esc(n));
        }
        None => {
            let _ = writeln!(out, "    <{tag}>");
        }
    }
    if !g.origin.is_identity() {
        write_origin(out, "      ", &g.origin);
    }
    out.push_str("      <geometry>\n");
    match &g.geometry {
        Geometry::Mesh { filename, scale } => {
            if *scale == [1.0; 3] {
                let _ = writeln!(out, "        <mesh filename=\"{}\"/>", esc(filename));
            } else {
                let _ = writeln!(
                    out,
                    "        <mesh filename=\"{}\" scale=\"{}\"/>",
                    esc(filename),
                    v3(scale)
                );
            }
        }
        Geometry::Opaque(raw) => {
            let _ = writeln!(out, "        {raw}");
        }
    }
    out.push_str("      </geometry>\n");
    for e in &g.extras {
        let _ = writeln!(out, "      {e}");
    }
    let _ = writeln!(out, "    </{tag}>");
}

/// Serializes `model` to URDF text.
///
/// Floats use the shortest representation that parses back to the same
/// bits. The documented initial state becomes a `key=value` comment block.
pub fn write_urdf(model: &AssetModel) -> Result<String, AssetError> {
    model.validate()?;
    let mut out = String::from("<?xml version=\"1.0\"?>\n");
    let _ = write!(out, "<robot name=\"{}\"", esc(&model.name));
    for (k, v) in &model.metadata {
        let _ = write!(out, " {k}=\"{}\"", esc(v));
    }
    out.push_str(">\n");
    if let Some(state) = &model.documented_initial_state {
        let _ = writeln!(out, "  <!-- {INITIAL_STATE_TAG}");
        for (k, v) in state {
            let _ = writeln!(out, "  {k}={v}");
        }
        out.push_str("  -->\n");
    }
    for link in &model.links {
        let _ = writeln!(out, "  <link name=\"{}\">", esc(&link.name));
        if link.mass.is_some() || link.inertia.is_some() || link.center_of_mass.is_some() {
            out.push_str("    <inertial>\n");
            if link.center_of_mass.is_some() || link.inertial_rpy != [0.0; 3] {
                write_origin(
                    &mut out,
                    "      ",
                    &Pose {
                        xyz: link.center_of_mass.unwrap_or([0.0; 3]),
                        rpy: link.inertial_rpy,
                    },
                );
            }
            if let Some(m) = link.mass {
                let _ = writeln!(out, "      <mass value=\"{m}\"/>");
            }
            if let Some(i) = &link.inertia {
                let _ = writeln!(
                    out,
                    "      <inertia ixx=\"{}\" ixy=\"{}\" ixz=\"{}\" iyy=\"{}\" iyz=\"{}\" izz=\"{}\"/>",
                    i.ixx, i.ixy, i.ixz, i.iyy, i.iyz, i.izz
                );
            }
            out.push_str("    </inertial>\n");
        }
        for v in &link.visuals {
            write_geometry_ref(&mut out, "visual", v);
        }
        for c in &link.collisions {
            write_geometry_ref(&mut out, "collision", c);
        }
        for e in &link.extras {
            let _ = writeln!(out, "    {e}");
        }
        out.push_str("  </link>\n");
    }
    for j in &model.joints {
        let _ = writeln!(
            out,
            "  <joint name=\"{}\" type=\"{}\">",
            esc(&j.name),
            j.kind.as_str()
        );
        if !j.origin.is_identity() {
            write_origin(&mut out, "    ", &j.origin);
        }
        let _ = writeln!(out, "    <parent link=\"{}\"/>", esc(&j.parent));
        let _ = writeln!(out, "    <child link=\"{}\"/>", esc(&j.child));
        if j.kind != JointKind::Fixed {
            let _ = writeln!(out, "    <axis xyz=\"{}\"/>", v3(&j.axis));
        }
        if let Some(l) = &j.limits {
            let _ = write!(
                out,
                "    <limit lower=\"{}\" upper=\"{}\"",
                l.lower, l.upper
            );
            if let Some(e) = l.effort {
                let _ = write!(out, " effort=\"{e}\"");
            }
            if let Some(v) = l.velocity {
                let _ = write!(out, " velocity=\"{v}\"");
            }
            out.push_str("/>\n");
        }
        if let Some(d) = &j.dynamics {
            out.push_str("    <dynamics");
            for (name, v) in [
                ("damping", d.damping),
                ("friction", d.friction),
                ("stiffness", d.stiffness),
            ] {
                if let Some(v) = v {
                    let _ = write!(out, " {name}=\"{v}\"");
                }
            }
            out.push_str("/>\n");
        }
        for e in &j.extras {
            let _ = writeln!(out, "    {e}");
        }
        out.push_str("  </joint>\n");
    }
    for e in &model.extras {
        let _ = writeln!(out, "  {e}");
    }
    out.push_str("</robot>\n");
    Ok(out)
}
