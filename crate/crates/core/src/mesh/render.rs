use image::{Rgb, RgbImage};
use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{MeshError, MeshStore, Role};
use crate::asset::{AssetModel, JointConfig, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Front,
    Back,
    Left,
    Right,
    Perspective,
    /// Looking down −z; not one of the canonical five.
    Top,
}

impl View {
    pub const ALL: [View; 5] = [
        View::Front,
        View::Back,
        View::Left,
        View::Right,
        View::Perspective,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            View::Front => "front",
            View::Back => "back",
            View::Left => "left",
            View::Right => "right",
            View::Perspective => "perspective",
            View::Top => "top",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub width: u32,
    pub height: u32,
    /// Direction towards the light, world frame.
    pub light_dir: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 256,
            height: 256,
            // 30° elevation, from the front-left.
            light_dir: [0.75, 0.433, 0.5],
        }
    }
}

const DEFAULT_COLOR: [f32; 3] = [0.7, 0.7, 0.7];
const AMBIENT: f64 = 0.2;

struct Camera {
    center: Point3<f64>,
    forward: Vector3<f64>,
    right: Vector3<f64>,
    up: Vector3<f64>,
    extent: f64,
    /// Eye distance from `center` for the perspective camera.
    eye_dist: Option<f64>,
}

impl Camera {
    fn new(view: View, center: Point3<f64>, extent: f64) -> Camera {
        if view == View::Top {
            return Camera {
                center,
                forward: -Vector3::z(),
                right: Vector3::x(),
                up: Vector3::y(),
                extent,
                eye_dist: None,
            };
        }
        let z = Vector3::z();
        let (forward, eye_dist) = match view {
            View::Front => (-Vector3::x(), None),
            View::Back => (Vector3::x(), None),
            View::Left => (-Vector3::y(), None),
            View::Right => (Vector3::y(), None),
            View::Perspective => (
                -Vector3::new(1.0, -1.0, 1.0).normalize(),
                Some(2.0 * extent),
            ),
            View::Top => unreachable!(),
        };
        let right = forward.cross(&z).normalize();
        let up = right.cross(&forward);
        Camera {
            center,
            forward,
            right,
            up,
            extent,
            eye_dist,
        }
    }

    /// Pixel coordinates and a depth key where larger means closer.
    fn project(&self, p: &Point3<f64>, w: f64, h: f64) -> Option<(f64, f64, f64)> {
        let rel = p - self.center;
        let (x, y, depth) = (
            rel.dot(&self.right),
            rel.dot(&self.up),
            rel.dot(&self.forward),
        );
        let (x, y, key) = match self.eye_dist {
            None => (x, y, -depth),
            Some(d) => {
                let z = depth + d;
                if z <= 1e-6 * d {
                    return None;
                }
                (x * d / z, y * d / z, 1.0 / z)
            }
        };
        Some((
            (x / self.extent + 0.5) * w,
            (0.5 - y / self.extent) * h,
            key,
        ))
    }
}

/// Renders the asset at configuration `q` from each requested view.
///
/// Flat Lambert shading with one directional light and a z-buffer on a
/// black background. Output depends only on the inputs.
pub fn render_views(
    model: &AssetModel,
    q: &JointConfig,
    views: &[View],
    store: &MeshStore,
    opts: &RenderOptions,
) -> Result<Vec<RgbImage>, MeshError> {
    let topo = Topology::new(model);
    let poses = topo.link_poses(model, q, &Isometry3::identity());
    let mut tris: Vec<([Point3<f64>; 3], [f32; 3])> = Vec::new();
    for (link, pose) in model.links.iter().zip(&poses) {
        for part in store.link_parts(model, &link.name, Role::Visual)? {
            let color = part.color.unwrap_or(DEFAULT_COLOR);
            for t in &part.triangles {
                tris.push((
                    [
                        pose * part.vertices[t[0]],
                        pose * part.vertices[t[1]],
                        pose * part.vertices[t[2]],
                    ],
                    color,
                ));
            }
        }
    }
    let (mut lo, mut hi) = (Point3::origin(), Point3::origin());
    if let Some((first, _)) = tris.first() {
        lo = first[0];
        hi = first[0];
    }
    for (t, _) in &tris {
        for p in t {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
    }
    let center = Point3::from((lo.coords + hi.coords) / 2.0);
    let extent = ((hi - lo).amax() * 1.2).max(1e-6);
    let light = Vector3::from(opts.light_dir).normalize();

    Ok(views
        .iter()
        .map(|&v| {
            let cam = Camera::new(v, center, extent);
            rasterize(&tris, &cam, &light, opts.width, opts.height)
        })
        .collect())
}

fn rasterize(
    tris: &[([Point3<f64>; 3], [f32; 3])],
    cam: &Camera,
    light: &Vector3<f64>,
    width: u32,
    height: u32,
) -> RgbImage {
    let (w, h) = (width as f64, height as f64);
    let mut img = RgbImage::new(width, height);
    let mut zbuf = vec![f64::NEG_INFINITY; (width * height) as usize];
    for (t, color) in tris {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        let norm = n.norm();
        if norm == 0.0 {
            continue;
        }
        let shade = AMBIENT + (1.0 - AMBIENT) * (n / norm).dot(light).abs();
        let px = Rgb(color.map(|c| (c as f64 * shade * 255.0).round().clamp(0.0, 255.0) as u8));
        let (Some(a), Some(b), Some(c)) = (
            cam.project(&t[0], w, h),
            cam.project(&t[1], w, h),
            cam.project(&t[2], w, h),
        ) else {
            continue;
        };
        let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a.0.min(b.0).min(c.0).floor().max(0.0) as u32;
        let x1 = (a.0.max(b.0).max(c.0).ceil().min(w) as u32).min(width);
        let y0 = a.1.min(b.1).min(c.1).floor().max(0.0) as u32;
        let y1 = (a.1.max(b.1).max(c.1).ceil().min(h) as u32).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (sx, sy) = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = ((b.0 - sx) * (c.1 - sy) - (b.1 - sy) * (c.0 - sx)) / area;
                let w1 = ((c.0 - sx) * (a.1 - sy) - (c.1 - sy) * (a.0 - sx)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let key = w0 * a.2 + w1 * b.2 + w2 * c.2;
                let idx = (y * width + x) as usize;
                if key > zbuf[idx] {
                    zbuf[idx] = key;
                    img.put_pixel(x, y, px);
                }
            }
        }
    }
    img
}

/// Encodes an image as PNG bytes.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}
