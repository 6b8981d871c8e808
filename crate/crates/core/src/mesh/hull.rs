use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::{MeshError, TriMesh};

struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(v: [usize; 3], pts: &[Point3<f64>]) -> Face {
        let n = (pts[v[1]] - pts[v[0]]).cross(&(pts[v[2]] - pts[v[0]]));
        let normal = n / n.norm();
        Face {
            v,
            normal,
            offset: normal.dot(&pts[v[0]].coords),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn dist(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

/// Convex hull of the vertices of `mesh` (faces are ignored).
///
/// Quickhull: start from a maximal tetrahedron, repeatedly add the farthest
/// outside point of some face and re-triangulate the horizon. The result is
/// watertight with outward-facing triangles.
pub fn convex_hull(mesh: &TriMesh) -> Result<TriMesh, MeshError> {
    let pts = &mesh.vertices;
    if pts.len() < 4 {
        return Err(MeshError::PlanarDegeneracy);
    }
    let (lo, hi) = mesh.bounds().ok_or(MeshError::PlanarDegeneracy)?;
    let scale = (hi - lo).amax().max(1.0);
    let eps = 1e-10 * scale;

    // Initial simplex from extreme points.
    let mut a = 0;
    let mut b = 0;
    for axis in 0..3 {
        let (mut imin, mut imax) = (0, 0);
        for (i, p) in pts.iter().enumerate() {
            if p[axis] < pts[imin][axis] {
                imin = i;
            }
            if p[axis] > pts[imax][axis] {
                imax = i;
            }
        }
        if (pts[imax] - pts[imin]).norm() > (pts[b] - pts[a]).norm() {
            a = imin;
            b = imax;
        }
    }
    if (pts[b] - pts[a]).norm() <= eps {
        return Err(MeshError::PlanarDegeneracy);
    }
    let ab = (pts[b] - pts[a]).normalize();
    let c = (0..pts.len())
        .max_by(|&i, &j| {
            let di = (pts[i] - pts[a]).cross(&ab).norm();
            let dj = (pts[j] - pts[a]).cross(&ab).norm();
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .unwrap();
    if (pts[c] - pts[a]).cross(&ab).norm() <= eps {
        return Err(MeshError::PlanarDegeneracy);
    }
    let n = (pts[b] - pts[a]).cross(&(pts[c] - pts[a])).normalize();
    let d = (0..pts.len())
        .max_by(|&i, &j| {
            let di = n.dot(&(pts[i] - pts[a])).abs();
            let dj = n.dot(&(pts[j] - pts[a])).abs();
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .unwrap();
    if n.dot(&(pts[d] - pts[a])).abs() <= eps {
        return Err(MeshError::PlanarDegeneracy);
    }

    let mut faces: Vec<Face> = Vec::new();
    let centroid =
        Point3::from((pts[a].coords + pts[b].coords + pts[c].coords + pts[d].coords) / 4.0);
    for tri in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
        let mut f = Face::new(tri, pts);
        if f.dist(&centroid) > 0.0 {
            f = Face::new([tri[0], tri[2], tri[1]], pts);
        }
        faces.push(f);
    }
    let mut edge_face: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            edge_face.insert((f.v[k], f.v[(k + 1) % 3]), fi);
        }
    }

    let simplex = [a, b, c, d];
    for (i, p) in pts.iter().enumerate() {
        if simplex.contains(&i) {
            continue;
        }
        if let Some(f) = faces.iter_mut().find(|f| f.dist(p) > eps) {
            f.outside.push(i);
        }
    }

    let mut cursor = 0;
    // Round-robin over faces keeps the traversal order deterministic.
    while let Some(fi) = (0..faces.len())
        .map(|k| (cursor + k) % faces.len())
        .find(|&k| faces[k].alive && !faces[k].outside.is_empty())
    {
        cursor = fi + 1;
        let eye = *faces[fi]
            .outside
            .iter()
            .max_by(|&&i, &&j| {
                faces[fi]
                    .dist(&pts[i])
                    .total_cmp(&faces[fi].dist(&pts[j]))
                    .then(j.cmp(&i))
            })
            .unwrap();
        let ep = pts[eye];

        // Visible region grown across shared edges from the seed face.
        let mut visible = vec![fi];
        let mut is_visible = HashMap::from([(fi, true)]);
        let mut head = 0;
        while head < visible.len() {
            let f = visible[head];
            head += 1;
            for k in 0..3 {
                let (u, v) = (faces[f].v[k], faces[f].v[(k + 1) % 3]);
                let g = edge_face[&(v, u)];
                if is_visible.contains_key(&g) {
                    continue;
                }
                let vis = faces[g].dist(&ep) > eps;
                is_visible.insert(g, vis);
                if vis {
                    visible.push(g);
                }
            }
        }
        let mut horizon = Vec::new();
        for &f in &visible {
            for k in 0..3 {
                let (u, v) = (faces[f].v[k], faces[f].v[(k + 1) % 3]);
                if !is_visible[&edge_face[&(v, u)]] {
                    horizon.push((u, v));
                }
            }
        }
        let mut orphans = Vec::new();
        for &f in &visible {
            faces[f].alive = false;
            orphans.append(&mut faces[f].outside);
            for k in 0..3 {
                edge_face.remove(&(faces[f].v[k], faces[f].v[(k + 1) % 3]));
            }
        }
        let first_new = faces.len();
        for (u, v) in horizon {
            let f = Face::new([u, v, eye], pts);
            let id = faces.len();
            for k in 0..3 {
                edge_face.insert((f.v[k], f.v[(k + 1) % 3]), id);
            }
            faces.push(f);
        }
        for i in orphans {
            if i == eye {
                continue;
            }
            if let Some(f) = faces[first_new..]
                .iter_mut()
                .find(|f| f.dist(&pts[i]) > eps)
            {
                f.outside.push(i);
            }
        }
    }

    let mut index = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let mut t = [0; 3];
        for k in 0..3 {
            t[k] = *index.entry(f.v[k]).or_insert_with(|| {
                vertices.push(pts[f.v[k]]);
                vertices.len() - 1
            });
        }
        triangles.push(t);
    }
    Ok(TriMesh {
        vertices,
        triangles,
        color: mesh.color,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{analyze_mesh, is_watertight};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted(mut v: Vec<Point3<f64>>) -> Vec<[f64; 3]> {
        let mut out: Vec<[f64; 3]> = v.drain(..).map(|p| [p.x, p.y, p.z]).collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    fn assert_convex_and_contains(hull: &TriMesh, points: &[Point3<f64>]) {
        assert!(is_watertight(hull));
        for t in &hull.triangles {
            let f = Face::new(*t, &hull.vertices);
            for p in points {
                assert!(
                    f.dist(p) <= 1e-9,
                    "point {p:?} outside hull by {}",
                    f.dist(p)
                );
            }
        }
    }

    #[test]
    fn cube_hull_is_the_cube() {
        let cube = TriMesh::cuboid([0.0; 3], [1.0; 3]);
        let h = convex_hull(&cube).unwrap();
        assert_eq!(sorted(h.vertices.clone()), sorted(cube.vertices.clone()));
        assert_convex_and_contains(&h, &cube.vertices);
        assert!((analyze_mesh(&h).volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interior_point_absorbed() {
        let mut pts = TriMesh::cuboid([0.0; 3], [1.0; 3]).vertices;
        pts.push(Point3::new(0.5, 0.5, 0.5));
        let h = convex_hull(&TriMesh::point_cloud(pts.clone())).unwrap();
        assert_eq!(h.vertices.len(), 8);
        assert_convex_and_contains(&h, &pts);
    }

    #[test]
    fn random_ball_points_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        while pts.len() < 100 {
            let p = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if p.norm() <= 1.0 {
                pts.push(Point3::from(p));
            }
        }
        let h = convex_hull(&TriMesh::point_cloud(pts.clone())).unwrap();
        assert_convex_and_contains(&h, &pts);
    }

    #[test]
    fn coplanar_input_rejected() {
        let pts = (0..10)
            .map(|i| Point3::new(i as f64, (i * i) as f64, 0.0))
            .collect();
        assert!(matches!(
            convex_hull(&TriMesh::point_cloud(pts)),
            Err(MeshError::PlanarDegeneracy)
        ));
    }

    #[test]
    fn hull_volume_bounds_nonconvex_mesh() {
        // L-shaped prism: two boxes sharing a face, welded into one closed surface.
        let a = TriMesh::cuboid([0.0; 3], [2.0, 1.0, 1.0]);
        let b = TriMesh::cuboid([0.0, 1.0, 0.0], [1.0, 2.0, 1.0]);
        let both = TriMesh::merge([&a, &b]);
        let hull = convex_hull(&both).unwrap();
        let v = analyze_mesh(&hull).volume;
        assert!(v >= 3.0 - 1e-12, "{v}");
    }
}
