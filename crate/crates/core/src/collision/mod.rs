//! Link-vs-link and link-vs-ground contacts on convex hulls, and the
//! penetration score built from them.

mod gjk;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Isometry3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asset::{AssetModel, JointConfig, JointSpec, Topology};
use crate::mesh::{convex_hull, MeshError, MeshStore, Role, TriMesh};

pub use gjk::{proximity, Proximity};

/// Near-contact reporting margin, m.
pub const CONTACT_MARGIN: f64 = 0.005;

/// Two colliding bodies. `b == None` stands for the ground plane.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkPair {
    pub a: String,
    pub b: Option<String>,
}

impl LinkPair {
    pub fn ground(link: impl Into<String>) -> Self {
        LinkPair {
            a: link.into(),
            b: None,
        }
    }

    pub fn links(a: impl Into<String>, b: impl Into<String>) -> Self {
        LinkPair {
            a: a.into(),
            b: Some(b.into()),
        }
    }
}

impl fmt::Display for LinkPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.b {
            Some(b) => write!(f, "{}<->{}", self.a, b),
            None => write!(f, "{}<->ground", self.a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub pair: LinkPair,
    pub point: [f64; 3],
    /// Unit normal pointing from `pair.b` towards `pair.a`.
    pub normal: [f64; 3],
    /// Negative when penetrating, m.
    pub signed_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPenetration {
    pub pair: LinkPair,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactReport {
    pub contacts: Vec<Contact>,
    /// Summed penetration per pair, only pairs with depth > 0, deepest first.
    pub per_pair_penetration: Vec<PairPenetration>,
    pub total: f64,
}

impl ContactReport {
    fn from_contacts(contacts: Vec<Contact>) -> Self {
        let mut per_pair: BTreeMap<LinkPair, f64> = BTreeMap::new();
        for c in &contacts {
            let d = (-c.signed_separation).max(0.0);
            if d > 0.0 {
                *per_pair.entry(c.pair.clone()).or_insert(0.0) += d;
            }
        }
        let mut per_pair_penetration: Vec<PairPenetration> = per_pair
            .into_iter()
            .map(|(pair, depth)| PairPenetration { pair, depth })
            .collect();
        per_pair_penetration.sort_by(|x, y| {
            y.depth
                .total_cmp(&x.depth)
                .then_with(|| x.pair.cmp(&y.pair))
        });
        let total = penetration_score(&contacts);
        ContactReport {
            contacts,
            per_pair_penetration,
            total,
        }
    }

    pub fn contact_count(&self) -> usize {
        self.contacts.len()
    }

    /// Compact view used in refinement prompts and reports.
    pub fn summary(&self, top: usize) -> serde_json::Value {
        serde_json::json!({
            "penetration_sum_m": self.total,
            "contact_count": self.contacts.len(),
            "severity": Severity::of(self.total).as_str(),
            "top_penetrating_pairs": self.per_pair_penetration.iter().take(top).map(|p| {
                serde_json::json!({
                    "link_a": p.pair.a,
                    "link_b": p.pair.b.as_deref().unwrap_or("ground"),
                    "penetration_m": p.depth,
                })
            }).collect::<Vec<_>>(),
        })
    }
}

/// Φ = Σ max(0, −s(p)) over all contacts.
pub fn penetration_score(contacts: &[Contact]) -> f64 {
    contacts
        .iter()
        .map(|c| (-c.signed_separation).max(0.0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Moderate,
    Significant,
}

impl Severity {
    /// Banding of a summed penetration depth.
    pub fn of(total: f64) -> Severity {
        if total < 0.01 {
            Severity::Minor
        } else if total < 0.05 {
            Severity::Moderate
        } else {
            Severity::Significant
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Severity::Minor => "minor",
            Severity::Moderate => "moderate",
            Severity::Significant => "significant",
        }
    }
}

/// Horizontal ground plane z = `height` with normal +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub height: f64,
}

impl Default for Ground {
    fn default() -> Self {
        Ground { height: 0.0 }
    }
}

/// Convex collision hulls per link (link frame) plus the pair list to test.
#[derive(Debug, Clone)]
pub struct CollisionModel {
    pub topology: Topology,
    /// Indexed like `model.links`.
    pub hulls: Vec<Vec<TriMesh>>,
    /// Self-collision candidate pairs as link indices, a < b.
    pub pairs: Vec<(usize, usize)>,
    /// Geometry parts that could not be hulled (flat or degenerate meshes).
    pub skipped: Vec<String>,
}

impl CollisionModel {
    pub fn new(model: &AssetModel, store: &MeshStore) -> Result<Self, MeshError> {
        let mut hulls = Vec::with_capacity(model.links.len());
        let mut skipped = Vec::new();
        for l in &model.links {
            let mut link_hulls = Vec::new();
            for (i, part) in store
                .link_parts(model, &l.name, Role::Collision)?
                .iter()
                .enumerate()
            {
                match convex_hull(part) {
                    Ok(h) => link_hulls.push(h),
                    Err(MeshError::PlanarDegeneracy) => skipped.push(format!("{}#{i}", l.name)),
                    Err(e) => return Err(e),
                }
            }
            hulls.push(link_hulls);
        }
        Ok(Self::from_hulls(model, hulls, skipped))
    }

    pub fn from_hulls(model: &AssetModel, hulls: Vec<Vec<TriMesh>>, skipped: Vec<String>) -> Self {
        let topology = Topology::new(model);
        let adjacent = |i: usize, j: usize| {
            let (a, b) = (&model.links[i].name, &model.links[j].name);
            model.joints.iter().any(|jt| {
                (&jt.parent == a && &jt.child == b) || (&jt.parent == b && &jt.child == a)
            })
        };
        let mut pairs = Vec::new();
        for i in 0..model.links.len() {
            for j in i + 1..model.links.len() {
                if !hulls[i].is_empty() && !hulls[j].is_empty() && !adjacent(i, j) {
                    pairs.push((i, j));
                }
            }
        }
        CollisionModel {
            topology,
            hulls,
            pairs,
            skipped,
        }
    }

    /// World-frame hull vertices per link.
    pub fn world_hulls(
        &self,
        model: &AssetModel,
        q: &JointConfig,
        base: &Isometry3<f64>,
    ) -> Vec<Vec<Vec<Point3<f64>>>> {
        let poses = self.topology.link_poses(model, q, base);
        self.hulls
            .iter()
            .zip(&poses)
            .map(|(hs, pose)| {
                hs.iter()
                    .map(|h| h.vertices.iter().map(|p| pose * p).collect())
                    .collect()
            })
            .collect()
    }

    /// Contacts at configuration `q` with the root placed at `base`.
    pub fn contacts(
        &self,
        model: &AssetModel,
        q: &JointConfig,
        base: &Isometry3<f64>,
        ground: Option<Ground>,
    ) -> ContactReport {
        let world = self.world_hulls(model, q, base);
        let bounds: Vec<Option<(Point3<f64>, Point3<f64>)>> = world
            .iter()
            .map(|hs| {
                let mut it = hs.iter().flatten();
                let first = *it.next()?;
                Some(it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
            })
            .collect();
        let overlaps = |i: usize, j: usize| match (bounds[i], bounds[j]) {
            (Some((alo, ahi)), Some((blo, bhi))) => (0..3)
                .all(|k| alo[k] <= bhi[k] + CONTACT_MARGIN && blo[k] <= ahi[k] + CONTACT_MARGIN),
            _ => false,
        };
        let mut contacts: Vec<Contact> = self
            .pairs
            .par_iter()
            .filter(|&&(i, j)| overlaps(i, j))
            .filter_map(|&(i, j)| {
                let mut best: Option<Proximity> = None;
                for ha in &world[i] {
                    for hb in &world[j] {
                        let p = proximity(ha, hb);
                        if best.is_none_or(|b| p.separation < b.separation) {
                            best = Some(p);
                        }
                    }
                }
                let p = best?;
                (p.separation <= CONTACT_MARGIN).then(|| Contact {
                    pair: LinkPair::links(&model.links[i].name, &model.links[j].name),
                    point: [p.point.x, p.point.y, p.point.z],
                    normal: [p.normal.x, p.normal.y, p.normal.z],
                    signed_separation: p.separation,
                })
            })
            .collect();
        if let Some(g) = ground {
            for (i, hs) in world.iter().enumerate() {
                let lowest = hs.iter().flatten().min_by(|a, b| a.z.total_cmp(&b.z));
                if let Some(p) = lowest {
                    let s = p.z - g.height;
                    if s <= CONTACT_MARGIN {
                        contacts.push(Contact {
                            pair: LinkPair::ground(&model.links[i].name),
                            point: [p.x, p.y, p.z],
                            normal: [0.0, 0.0, 1.0],
                            signed_separation: s,
                        });
                    }
                }
            }
        }
        ContactReport::from_contacts(contacts)
    }

    /// Self-collision penetration score Φ(q) with the root at the origin.
    pub fn self_penetration(&self, model: &AssetModel, q: &JointConfig) -> f64 {
        self.contacts(model, q, &Isometry3::identity(), None).total
    }
}

/// Builds hulls from `store` and reports contacts at `q`.
pub fn compute_contacts(
    model: &AssetModel,
    store: &MeshStore,
    q: &JointConfig,
    ground: Option<Ground>,
) -> Result<ContactReport, MeshError> {
    let cm = CollisionModel::new(model, store)?;
    Ok(cm.contacts(model, q, &Isometry3::identity(), ground))
}

/// Active joints on the tree path between the two links of each penetrating
/// pair, deepest pair first, nearest-to-the-link first, without repeats.
pub fn localize_focus_joints(
    model: &AssetModel,
    report: &ContactReport,
    cap: usize,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for pp in &report.per_pair_penetration {
        let path_a = model.root_path(&pp.pair.a);
        let path_b = match &pp.pair.b {
            Some(b) => model.root_path(b),
            None => Vec::new(),
        };
        let common = path_a
            .iter()
            .zip(&path_b)
            .take_while(|(x, y)| x.name == y.name)
            .count();
        let side = |p: &[&JointSpec]| -> Vec<String> {
            p[common..]
                .iter()
                .rev()
                .filter(|j| j.kind.is_active())
                .map(|j| j.name.clone())
                .collect()
        };
        let joints: Vec<String> = if pp.pair.b.is_none() {
            path_a
                .iter()
                .rev()
                .filter(|j| j.kind.is_active())
                .map(|j| j.name.clone())
                .collect()
        } else {
            let mut v = side(&path_a);
            v.extend(side(&path_b));
            v
        };
        for j in joints {
            if !out.contains(&j) {
                out.push(j);
            }
        }
    }
    out.truncate(cap);
    out
}

/// Unit contact normal as a vector.
pub fn normal_of(c: &Contact) -> Vector3<f64> {
    Vector3::new(c.normal[0], c.normal[1], c.normal[2])
}
