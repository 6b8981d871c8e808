//! Triangle meshes: loading, cleanup, geometric statistics, hulls and renders.

mod hull;
mod render;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::asset::{AssetModel, GeometryRef};

pub use hull::convex_hull;
pub use render::{encode_png, render_views, RenderOptions, View};

pub const WELD_TOLERANCE: f64 = 1e-9;
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("unsupported mesh extension for `{0}`")]
    UnknownExtension(String),
    #[error("cannot read mesh `{path}`: {message}")]
    Unreadable { path: String, message: String },
    #[error("mesh `{0}` has no triangles")]
    Empty(String),
    #[error("input points are coplanar; a volume hull does not exist")]
    PlanarDegeneracy,
    #[error("mesh `{0}` referenced by the asset was not found")]
    Missing(String),
}

/// Indexed triangle mesh in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Diffuse base color from the source material, if any.
    pub color: Option<[f32; 3]>,
}

impl TriMesh {
    /// Builds a mesh and runs the cleanup pass (weld, drop degenerate triangles).
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Self {
        let mut m = TriMesh {
            vertices,
            triangles,
            color: None,
        };
        m.clean();
        m
    }

    /// Axis-aligned box spanning `min`..`max`, outward-facing triangles.
    pub fn cuboid(min: [f64; 3], max: [f64; 3]) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            vertices.push(Point3::new(
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            ));
        }
        let triangles = vec![
            [0, 2, 1],
            [1, 2, 3], // -z
            [4, 5, 6],
            [5, 7, 6], // +z
            [0, 1, 4],
            [1, 5, 4], // -y
            [2, 6, 3],
            [3, 6, 7], // +y
            [0, 4, 2],
            [2, 4, 6], // -x
            [1, 3, 5],
            [3, 7, 5], // +x
        ];
        TriMesh::new(vertices, triangles)
    }

    /// Vertices without faces, as input for [`convex_hull`].
    pub fn point_cloud(points: Vec<Point3<f64>>) -> Self {
        TriMesh {
            vertices: points,
            triangles: Vec::new(),
            color: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn clean(&mut self) {
        let inv = 1.0 / WELD_TOLERANCE;
        let key = |p: &Point3<f64>| {
            [
                (p.x * inv).round() as i64,
                (p.y * inv).round() as i64,
                (p.z * inv).round() as i64,
            ]
        };
        let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut welded: Vec<Point3<f64>> = Vec::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        for p in &self.vertices {
            let k = key(p);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(ids) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &id in ids {
                                if (welded[id] - p).norm() <= WELD_TOLERANCE {
                                    found = Some(id);
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            let id = found.unwrap_or_else(|| {
                welded.push(*p);
                grid.entry(k).or_default().push(welded.len() - 1);
                welded.len() - 1
            });
            remap.push(id);
        }
        let mut used = vec![false; welded.len()];
        let mut tris = Vec::with_capacity(self.triangles.len());
        for t in &self.triangles {
            if t.iter().any(|&i| i >= remap.len()) {
                continue;
            }
            let t = [remap[t[0]], remap[t[1]], remap[t[2]]];
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                continue;
            }
            let area = 0.5
                * (welded[t[1]] - welded[t[0]])
                    .cross(&(welded[t[2]] - welded[t[0]]))
                    .norm();
            if area < MIN_TRIANGLE_AREA {
                continue;
            }
            for &i in &t {
                used[i] = true;
            }
            tris.push(t);
        }
        // Compact away vertices no triangle references.
        let mut index = vec![usize::MAX; welded.len()];
        let mut verts = Vec::new();
        for (i, p) in welded.into_iter().enumerate() {
            if used[i] {
                index[i] = verts.len();
                verts.push(p);
            }
        }
        for t in &mut tris {
            *t = [index[t[0]], index[t[1]], index[t[2]]];
        }
        self.vertices = verts;
        self.triangles = tris;
    }

    /// Applies per-axis `scale` in the mesh frame, then the rigid `pose`.
    pub fn transformed(&self, pose: &Isometry3<f64>, scale: [f64; 3]) -> TriMesh {
        let flip = scale[0] * scale[1] * scale[2] < 0.0;
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|p| pose * Point3::new(p.x * scale[0], p.y * scale[1], p.z * scale[2]))
                .collect(),
            triangles: if flip {
                self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect()
            } else {
                self.triangles.clone()
            },
            color: self.color,
        }
    }

    /// Concatenates meshes without welding across parts.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a TriMesh>) -> TriMesh {
        let mut out = TriMesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
            color: None,
        };
        for p in parts {
            let off = out.vertices.len();
            out.vertices.extend_from_slice(&p.vertices);
            out.triangles.extend(
                p.triangles
                    .iter()
                    .map(|t| [t[0] + off, t[1] + off, t[2] + off]),
            );
            out.color = out.color.or(p.color);
        }
        out
    }

    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        let (mut lo, mut hi) = (first, first);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some((lo, hi))
    }
}

/// Reads an OBJ or STL (ASCII or binary) file and cleans it.
pub fn load_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    let shown = path.display().to_string();
    let unreadable = |message: String| MeshError::Unreadable {
        path: shown.clone(),
        message,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let mesh = match ext.as_str() {
        "obj" => {
            let opts = tobj::LoadOptions {
                triangulate: true,
                single_index: true,
                ..Default::default()
            };
            let (models, materials) =
                tobj::load_obj(path, &opts).map_err(|e| unreadable(e.to_string()))?;
            let materials = materials.unwrap_or_default();
            let mut vertices = Vec::new();
            let mut triangles = Vec::new();
            let mut color = None;
            for m in &models {
                let off = vertices.len();
                vertices.extend(
                    m.mesh
                        .positions
                        .chunks_exact(3)
                        .map(|c| Point3::new(c[0], c[1], c[2])),
                );
                triangles.extend(m.mesh.indices.chunks_exact(3).map(|c| {
                    [
                        c[0] as usize + off,
                        c[1] as usize + off,
                        c[2] as usize + off,
                    ]
                }));
                if color.is_none() {
                    color = m
                        .mesh
                        .material_id
                        .and_then(|id| materials.get(id))
                        .and_then(|mat| mat.diffuse)
                        .map(|d| [d[0] as f32, d[1] as f32, d[2] as f32]);
                }
            }
            let mut mesh = TriMesh::new(vertices, triangles);
            mesh.color = color;
            mesh
        }
        "stl" => {
            let mut file = std::fs::File::open(path).map_err(|e| unreadable(e.to_string()))?;
            let stl = stl_io::read_stl(&mut file).map_err(|e| unreadable(e.to_string()))?;
            let vertices = stl
                .vertices
                .iter()
                .map(|v| Point3::new(v[0] as f64, v[1] as f64, v[2] as f64))
                .collect();
            let triangles = stl.faces.iter().map(|f| f.vertices).collect();
            TriMesh::new(vertices, triangles)
        }
        _ => return Err(MeshError::UnknownExtension(shown)),
    };
    if mesh.is_empty() {
        return Err(MeshError::Empty(shown));
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeSource {
    Exact,
    BboxEstimate,
}

impl std::fmt::Display for VolumeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VolumeSource::Exact => "exact",
            VolumeSource::BboxEstimate => "bbox-estimate",
        })
    }
}

/// Geometric statistics of one mesh (or one link's merged meshes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshAnalysis {
    pub volume: f64,
    pub surface_area: f64,
    /// Extents (w, h, d) along x, y, z.
    pub bbox: [f64; 3],
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub center_of_mass: [f64; 3],
    pub watertight: bool,
    pub volume_source: VolumeSource,
}

impl MeshAnalysis {
    /// Ratio of volume to bounding-box volume; 0 for a flat box.
    pub fn fill_ratio(&self) -> f64 {
        let b = self.bbox[0] * self.bbox[1] * self.bbox[2];
        if b > 0.0 {
            self.volume / b
        } else {
            0.0
        }
    }
}

/// True when every directed edge appears once and its reverse once.
pub fn is_watertight(mesh: &TriMesh) -> bool {
    if mesh.triangles.is_empty() {
        return false;
    }
    let mut edges: HashMap<(usize, usize), u32> = HashMap::with_capacity(mesh.triangles.len() * 3);
    for t in &mesh.triangles {
        for k in 0..3 {
            *edges.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    edges
        .iter()
        .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
}

pub fn analyze_mesh(mesh: &TriMesh) -> MeshAnalysis {
    let (lo, hi) = mesh
        .bounds()
        .unwrap_or((Point3::origin(), Point3::origin()));
    let ext = hi - lo;
    let mut area = 0.0;
    let mut signed = 0.0;
    let mut moment = Vector3::zeros();
    for t in &mesh.triangles {
        let (a, b, c) = (
            mesh.vertices[t[0]].coords,
            mesh.vertices[t[1]].coords,
            mesh.vertices[t[2]].coords,
        );
        area += 0.5 * (b - a).cross(&(c - a)).norm();
        let v = a.dot(&b.cross(&c)) / 6.0;
        signed += v;
        moment += v * (a + b + c) / 4.0;
    }
    let watertight = is_watertight(mesh);
    let center = (lo.coords + hi.coords) / 2.0;
    let (volume, com, source) = if watertight && signed.abs() > 0.0 {
        (signed.abs(), moment / signed, VolumeSource::Exact)
    } else {
        (ext.x * ext.y * ext.z, center, VolumeSource::BboxEstimate)
    };
    MeshAnalysis {
        volume,
        surface_area: area,
        bbox: [ext.x, ext.y, ext.z],
        bbox_min: [lo.x, lo.y, lo.z],
        bbox_max: [hi.x, hi.y, hi.z],
        center_of_mass: [com.x, com.y, com.z],
        watertight: watertight && source == VolumeSource::Exact,
        volume_source: source,
    }
}

/// Which geometry list of a link to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Visual meshes, falling back to collision meshes.
    Visual,
    /// Collision meshes, falling back to visual meshes.
    Collision,
}

/// Loaded meshes keyed by the filename used in the asset.
///
/// Filenames resolve against `base_dir`; `package://pkg/` and `file://`
/// prefixes are stripped first. Meshes can also be inserted directly.
#[derive(Debug, Clone, Default)]
pub struct MeshStore {
    base_dir: PathBuf,
    meshes: BTreeMap<String, Arc<TriMesh>>,
}

impl MeshStore {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        MeshStore {
            base_dir: base_dir.into(),
            meshes: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, filename: impl Into<String>, mesh: TriMesh) {
        self.meshes.insert(filename.into(), Arc::new(mesh));
    }

    pub fn resolve(&self, filename: &str) -> PathBuf {
        let rel = if let Some(rest) = filename.strip_prefix("package://") {
            rest.split_once('/').map(|(_, p)| p).unwrap_or(rest)
        } else {
            filename.strip_prefix("file://").unwrap_or(filename)
        };
        self.base_dir.join(rel)
    }

    /// Loads every mesh referenced by `model` that is not cached yet.
    pub fn preload(&mut self, model: &AssetModel) -> Result<(), MeshError> {
        for link in &model.links {
            for g in link.visuals.iter().chain(&link.collisions) {
                if let Some((name, _)) = g.mesh_filename() {
                    if !self.meshes.contains_key(name) {
                        let path = self.resolve(name);
                        if !path.exists() {
                            return Err(MeshError::Missing(path.display().to_string()));
                        }
                        let mesh = load_mesh(&path)?;
                        self.meshes.insert(name.to_string(), Arc::new(mesh));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, filename: &str) -> Option<&Arc<TriMesh>> {
        self.meshes.get(filename)
    }

    pub fn filenames(&self) -> impl Iterator<Item = &str> {
        self.meshes.keys().map(String::as_str)
    }

    fn part(&self, g: &GeometryRef) -> Result<Option<TriMesh>, MeshError> {
        let Some((name, scale)) = g.mesh_filename() else {
            return Ok(None);
        };
        let mesh = self
            .meshes
            .get(name)
            .ok_or_else(|| MeshError::Missing(name.to_string()))?;
        Ok(Some(mesh.transformed(&g.origin.to_isometry(), scale)))
    }

    /// Mesh parts of `link` in the link frame, one per geometry element.
    pub fn link_parts(
        &self,
        model: &AssetModel,
        link: &str,
        role: Role,
    ) -> Result<Vec<TriMesh>, MeshError> {
        let Some(l) = model.link(link) else {
            return Ok(Vec::new());
        };
        let (first, second) = match role {
            Role::Visual => (&l.visuals, &l.collisions),
            Role::Collision => (&l.collisions, &l.visuals),
        };
        let mut parts = Vec::new();
        for g in first {
            parts.extend(self.part(g)?);
        }
        if parts.is_empty() {
            for g in second {
                parts.extend(self.part(g)?);
            }
        }
        Ok(parts)
    }

    /// All parts of `link` merged into one mesh, or None if it has no mesh geometry.
    pub fn link_mesh(
        &self,
        model: &AssetModel,
        link: &str,
        role: Role,
    ) -> Result<Option<TriMesh>, MeshError> {
        let parts = self.link_parts(model, link, role)?;
        Ok(if parts.is_empty() {
            None
        } else {
            Some(TriMesh::merge(&parts))
        })
    }

    /// Per-link analysis of the merged visual geometry in the link frame.
    pub fn analyze_links(
        &self,
        model: &AssetModel,
    ) -> Result<BTreeMap<String, MeshAnalysis>, MeshError> {
        let mut out = BTreeMap::new();
        for l in &model.links {
            if let Some(m) = self.link_mesh(model, &l.name, Role::Visual)? {
                out.insert(l.name.clone(), analyze_mesh(&m));
            }
        }
        Ok(out)
    }
}

/// Writes `mesh` as a Wavefront OBJ.
pub fn write_obj(mesh: &TriMesh, path: &Path) -> std::io::Result<()> {
    use std::fmt::Write as _;
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    std::fs::write(path, s)
}
