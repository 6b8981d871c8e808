//! GJK distance and EPA penetration depth for convex vertex sets.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

const MAX_GJK_ITERS: usize = 64;
const MAX_EPA_ITERS: usize = 128;

#[derive(Clone, Copy, Debug)]
struct SupportPoint {
    /// Minkowski difference point a − b.
    w: Vector3<f64>,
    a: Vector3<f64>,
}

fn support_of(points: &[Point3<f64>], d: &Vector3<f64>) -> Vector3<f64> {
    let mut best = points[0].coords;
    let mut best_dot = best.dot(d);
    for p in &points[1..] {
        let v = p.coords.dot(d);
        if v > best_dot {
            best_dot = v;
            best = p.coords;
        }
    }
    best
}

fn support(a: &[Point3<f64>], b: &[Point3<f64>], d: &Vector3<f64>) -> SupportPoint {
    let pa = support_of(a, d);
    let pb = support_of(b, &-d);
    SupportPoint { w: pa - pb, a: pa }
}

/// Result of a convex-convex query. `normal` points from B towards A.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proximity {
    /// Distance if positive, −depth if overlapping.
    pub separation: f64,
    pub normal: Vector3<f64>,
    /// Witness point on A.
    pub point: Point3<f64>,
}

/// Closest point to the origin on the simplex, as weights over its vertices.
/// Vertices with zero weight are dropped from `s`.
fn closest_on_simplex(s: &mut Vec<SupportPoint>) -> Option<Vec<f64>> {
    match s.len() {
        1 => Some(vec![1.0]),
        2 => {
            let (a, b) = (s[0].w, s[1].w);
            let ab = b - a;
            let t = (-a.dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            if !t.is_finite() || t <= 0.0 {
                s.truncate(1);
                Some(vec![1.0])
            } else if t >= 1.0 {
                s.remove(0);
                Some(vec![1.0])
            } else {
                Some(vec![1.0 - t, t])
            }
        }
        3 => Some(closest_on_triangle(s)),
        4 => closest_on_tetra(s),
        _ => unreachable!(),
    }
}

fn closest_on_triangle(s: &mut Vec<SupportPoint>) -> Vec<f64> {
    // Ericson, Real-Time Collision Detection 5.1.5, with p = origin.
    let (a, b, c) = (s[0].w, s[1].w, s[2].w);
    let ab = b - a;
    let ac = c - a;
    let ap = -a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        s.truncate(1);
        return vec![1.0];
    }
    let bp = -b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        *s = vec![s[1]];
        return vec![1.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        s.truncate(2);
        return vec![1.0 - v, v];
    }
    let cp = -c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        *s = vec![s[2]];
        return vec![1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        *s = vec![s[0], s[2]];
        return vec![1.0 - w, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        *s = vec![s[1], s[2]];
        return vec![1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    vec![1.0 - v - w, v, w]
}

/// None when the origin is inside the tetrahedron.
fn closest_on_tetra(s: &mut Vec<SupportPoint>) -> Option<Vec<f64>> {
    let pts = [s[0].w, s[1].w, s[2].w, s[3].w];
    let faces = [[0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 3, 1], [1, 2, 3, 0]];
    let mut best: Option<(f64, Vec<SupportPoint>, Vec<f64>)> = None;
    for f in faces {
        let n = (pts[f[1]] - pts[f[0]]).cross(&(pts[f[2]] - pts[f[0]]));
        let side_origin = n.dot(&-pts[f[0]]);
        let side_other = n.dot(&(pts[f[3]] - pts[f[0]]));
        // Origin strictly on the far side of this face from the fourth vertex.
        if side_origin * side_other < 0.0 {
            let mut sub = vec![s[f[0]], s[f[1]], s[f[2]]];
            let w = closest_on_triangle(&mut sub);
            let p: Vector3<f64> = sub.iter().zip(&w).map(|(sp, &wi)| sp.w * wi).sum();
            let d = p.norm_squared();
            if best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, sub, w));
            }
        }
    }
    let (_, sub, w) = best?;
    *s = sub;
    Some(w)
}

/// Separation between the convex hulls of two vertex sets.
pub fn proximity(a: &[Point3<f64>], b: &[Point3<f64>]) -> Proximity {
    let scale = a
        .iter()
        .chain(b)
        .map(|p| p.coords.amax())
        .fold(1.0f64, f64::max);
    let tol = 1e-12 * scale;

    let mut d = a[0].coords - b[0].coords;
    if d.norm_squared() == 0.0 {
        d = Vector3::x();
    }
    let mut simplex = vec![support(a, b, &-d)];
    let mut weights = vec![1.0];
    for _ in 0..MAX_GJK_ITERS {
        let Some(w) = closest_on_simplex(&mut simplex) else {
            return epa(a, b, simplex, scale);
        };
        weights = w;
        let v: Vector3<f64> = simplex
            .iter()
            .zip(&weights)
            .map(|(sp, &wi)| sp.w * wi)
            .sum();
        let vn = v.norm();
        if vn <= tol {
            return epa(a, b, simplex, scale);
        }
        let sp = support(a, b, &-v);
        // No progress towards the origin: v is the closest point of A − B.
        if vn * vn - v.dot(&sp.w) <= 1e-10 * vn * vn
            || simplex.iter().any(|s| (s.w - sp.w).norm() <= tol)
        {
            break;
        }
        simplex.push(sp);
    }
    let v: Vector3<f64> = simplex
        .iter()
        .zip(&weights)
        .map(|(sp, &wi)| sp.w * wi)
        .sum();
    let pa: Vector3<f64> = simplex
        .iter()
        .zip(&weights)
        .map(|(sp, &wi)| sp.a * wi)
        .sum();
    let dist = v.norm();
    Proximity {
        separation: dist,
        normal: if dist > 0.0 { v / dist } else { Vector3::z() },
        point: Point3::from(pa),
    }
}

struct EpaFace {
    v: [usize; 3],
    n: Vector3<f64>,
    dist: f64,
}

fn epa_face(pts: &[SupportPoint], v: [usize; 3], inner: &Vector3<f64>) -> Option<EpaFace> {
    let (a, b, c) = (pts[v[0]].w, pts[v[1]].w, pts[v[2]].w);
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len == 0.0 {
        return None;
    }
    let mut n = n / len;
    let mut v = v;
    if n.dot(&(a - inner)) < 0.0 {
        n = -n;
        v.swap(1, 2);
    }
    Some(EpaFace {
        v,
        n,
        dist: n.dot(&a),
    })
}

/// Expands the GJK simplex into a tetrahedron around the origin's neighborhood.
fn blow_up(
    a: &[Point3<f64>],
    b: &[Point3<f64>],
    mut s: Vec<SupportPoint>,
    tol: f64,
) -> Option<Vec<SupportPoint>> {
    let dirs = [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
    ];
    let independent = |s: &[SupportPoint], p: &Vector3<f64>| -> bool {
        match s.len() {
            0 => true,
            1 => (p - s[0].w).norm() > tol,
            2 => {
                (s[1].w - s[0].w).cross(&(p - s[0].w)).norm()
                    > tol * (s[1].w - s[0].w).norm().max(tol)
            }
            _ => {
                let n = (s[1].w - s[0].w).cross(&(s[2].w - s[0].w));
                n.dot(&(p - s[0].w)).abs() > tol * n.norm().max(tol)
            }
        }
    };
    while s.len() < 4 {
        let mut cands: Vec<Vector3<f64>> = Vec::new();
        match s.len() {
            0 | 1 => cands.extend(dirs),
            2 => {
                let e = s[1].w - s[0].w;
                for d in dirs {
                    let perp = d - e * (d.dot(&e) / e.norm_squared());
                    if perp.norm() > 1e-9 {
                        cands.push(perp);
                    }
                }
            }
            _ => {
                let n = (s[1].w - s[0].w).cross(&(s[2].w - s[0].w));
                cands.push(n);
                cands.push(-n);
            }
        }
        let mut added = false;
        for d in cands {
            let sp = support(a, b, &d);
            if independent(&s, &sp.w) {
                s.push(sp);
                added = true;
                break;
            }
        }
        if !added {
            return None;
        }
    }
    Some(s)
}

fn epa(a: &[Point3<f64>], b: &[Point3<f64>], simplex: Vec<SupportPoint>, scale: f64) -> Proximity {
    let tol = 1e-10 * scale;
    let touching = |sp: Option<&SupportPoint>| Proximity {
        separation: 0.0,
        normal: Vector3::z(),
        point: Point3::from(sp.map(|s| s.a).unwrap_or(a[0].coords)),
    };
    let Some(pts0) = blow_up(a, b, simplex.clone(), tol) else {
        return touching(simplex.first());
    };
    let mut pts = pts0;
    let inner: Vector3<f64> = pts.iter().map(|p| p.w).sum::<Vector3<f64>>() / 4.0;
    let mut faces: Vec<EpaFace> = Vec::new();
    for f in [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]] {
        match epa_face(&pts, f, &inner) {
            Some(face) => faces.push(face),
            None => return touching(pts.first()),
        }
    }
    let mut best = 0;
    for _ in 0..MAX_EPA_ITERS {
        best = (0..faces.len())
            .min_by(|&i, &j| faces[i].dist.total_cmp(&faces[j].dist).then(i.cmp(&j)))
            .unwrap();
        let n = faces[best].n;
        let sp = support(a, b, &n);
        if sp.w.dot(&n) - faces[best].dist <= tol {
            break;
        }
        let new_idx = pts.len();
        pts.push(sp);
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        let mut kept = Vec::with_capacity(faces.len());
        for f in faces.drain(..) {
            if f.n.dot(&(sp.w - pts[f.v[0]].w)) > 0.0 {
                for k in 0..3 {
                    let (u, v) = (f.v[k], f.v[(k + 1) % 3]);
                    if edges.remove(&(v, u)).is_none() {
                        edges.insert((u, v), 1);
                    }
                }
            } else {
                kept.push(f);
            }
        }
        faces = kept;
        let mut horizon: Vec<(usize, usize)> = edges.into_keys().collect();
        horizon.sort_unstable();
        for (u, v) in horizon {
            if let Some(face) = epa_face(&pts, [u, v, new_idx], &inner) {
                faces.push(face);
            }
        }
        if faces.is_empty() {
            return touching(pts.first());
        }
    }
    let f = &faces[best];
    // Barycentric weights of the origin's projection on the closest face.
    let p = f.n * f.dist;
    let (x, y, z) = (pts[f.v[0]], pts[f.v[1]], pts[f.v[2]]);
    let v0 = y.w - x.w;
    let v1 = z.w - x.w;
    let v2 = p - x.w;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let den = d00 * d11 - d01 * d01;
    let (u, w) = if den.abs() > 0.0 {
        ((d11 * d20 - d01 * d21) / den, (d00 * d21 - d01 * d20) / den)
    } else {
        (0.0, 0.0)
    };
    let pa = x.a * (1.0 - u - w) + y.a * u + z.a * w;
    Proximity {
        separation: -f.dist.max(0.0),
        normal: -f.n,
        point: Point3::from(pa),
    }
}
