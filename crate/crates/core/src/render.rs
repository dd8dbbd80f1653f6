//! Hard z-buffered rasterizer for ground-truth silhouettes and shaded
//! grayscale frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{CameraPose, Intrinsics, Trajectory};
use crate::error::{invalid, Result};
use crate::geometry::TriangleMesh;
use crate::image::{IntensityFrame, SilhouetteMask};
use crate::Vec3;

/// Faces with any vertex closer than this (view-space z) are not drawn.
pub const NEAR_PLANE: f64 = 1e-6;

const AMBIENT: f64 = 0.1;
const DIFFUSE: f64 = 0.9;

/// Screen-space vertex: pixel coordinates and view depth.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScreenVertex {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

pub(crate) fn project_vertices(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    k: &Intrinsics,
) -> Vec<Option<ScreenVertex>> {
    mesh.vertices()
        .iter()
        .map(|p| {
            let q = pose.to_view(p);
            (q.z > NEAR_PLANE).then(|| ScreenVertex {
                u: k.focal * q.x / q.z + k.cx,
                v: k.focal * q.y / q.z + k.cy,
                z: q.z,
            })
        })
        .collect()
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Pixel range `[lo, hi)` whose centres can fall inside `[min, max]`.
pub(crate) fn pixel_span(min: f64, max: f64, limit: usize) -> Option<(usize, usize)> {
    let lo = (min - 0.5).ceil().max(0.0);
    let hi = ((max - 0.5).floor() + 1.0).min(limit as f64);
    (lo.is_finite() && hi.is_finite() && lo < hi).then(|| (lo as usize, hi as usize))
}

/// Visits every pixel whose centre lies inside the triangle, passing
/// screen-space barycentric weights.
fn for_each_covered_pixel(
    tri: [ScreenVertex; 3],
    k: &Intrinsics,
    mut visit: impl FnMut(usize, usize, [f64; 3]),
) {
    let [a, b, c] = tri.map(|s| (s.u, s.v));
    let area = edge(a, b, c);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let xs = [a.0, b.0, c.0];
    let ys = [a.1, b.1, c.1];
    let min = |v: [f64; 3]| v[0].min(v[1]).min(v[2]);
    let max = |v: [f64; 3]| v[0].max(v[1]).max(v[2]);
    let (Some((x0, x1)), Some((y0, y1))) =
        (pixel_span(min(xs), max(xs), k.width), pixel_span(min(ys), max(ys), k.height))
    else {
        return;
    };
    for y in y0..y1 {
        let py = y as f64 + 0.5;
        for x in x0..x1 {
            let p = (x as f64 + 0.5, py);
            let w0 = edge(b, c, p) / area;
            let w1 = edge(c, a, p) / area;
            let w2 = edge(a, b, p) / area;
            if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                visit(x, y, [w0, w1, w2]);
            }
        }
    }
}

fn face_screen(screen: &[Option<ScreenVertex>], f: &[usize; 3]) -> Option<[ScreenVertex; 3]> {
    Some([screen[f[0]]?, screen[f[1]]?, screen[f[2]]?])
}

/// Binary mask: a pixel is 1 iff its centre is covered by a face lying
/// entirely in front of the camera.
pub fn rasterize_silhouette(mesh: &TriangleMesh, pose: &CameraPose, k: &Intrinsics) -> SilhouetteMask {
    let screen = project_vertices(mesh, pose, k);
    let mut mask = SilhouetteMask::zeros(k.width, k.height);
    for f in mesh.faces() {
        if let Some(tri) = face_screen(&screen, f) {
            for_each_covered_pixel(tri, k, |x, y, _| mask.set(x, y, 1.0));
        }
    }
    mask
}

/// Shading inputs shared by every frame of a sequence.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Flat albedo per face, in `[0, 1]`.
    pub albedo: Vec<f64>,
    pub background: IntensityFrame,
    /// Direction towards the light in world coordinates.
    pub light_dir: Vec3,
}

/// Seeded per-face albedo in `[0.2, 0.9]`.
pub fn random_albedo(n_faces: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_faces).map(|_| rng.random_range(0.2..=0.9)).collect()
}

/// Lambertian z-buffered render over `background`.
pub fn render_intensity(
    mesh: &TriangleMesh,
    albedo: &[f64],
    background: &IntensityFrame,
    pose: &CameraPose,
    k: &Intrinsics,
    light_dir: &Vec3,
) -> Result<IntensityFrame> {
    if background.width != k.width || background.height != k.height {
        return invalid(format!(
            "background is {}x{}, intrinsics are {}x{}",
            background.width, background.height, k.width, k.height
        ));
    }
    if albedo.len() != mesh.faces().len() {
        return invalid("albedo needs one value per face");
    }
    let light = light_dir.try_normalize(0.0).unwrap_or_else(Vec3::zeros);
    let screen = project_vertices(mesh, pose, k);
    let mut out = background.clone();
    let mut inv_depth = vec![0.0f64; k.pixel_count()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let Some(tri) = face_screen(&screen, f) else { continue };
        let n = mesh.face_normal(fi).try_normalize(0.0).unwrap_or_else(Vec3::zeros);
        let shade = (albedo[fi] * n.dot(&light).max(0.0) * DIFFUSE + AMBIENT).clamp(0.0, 1.0);
        let iz = tri.map(|s| 1.0 / s.z);
        for_each_covered_pixel(tri, k, |x, y, w| {
            let d = w[0] * iz[0] + w[1] * iz[1] + w[2] * iz[2];
            let idx = y * k.width + x;
            if d > inv_depth[idx] {
                inv_depth[idx] = d;
                out.data[idx] = shade;
            }
        });
    }
    Ok(out)
}

/// One rendered viewpoint.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub frame: IntensityFrame,
    pub mask: SilhouetteMask,
    pub pose: CameraPose,
}

/// Renders every pose of the trajectory; frame timestamps follow the trajectory.
pub fn render_sequence(
    mesh: &TriangleMesh,
    trajectory: &Trajectory,
    k: &Intrinsics,
    scene: &Scene,
) -> Result<Vec<RenderedView>> {
    let background = scene.background.resized(k.width, k.height);
    trajectory
        .poses()
        .par_iter()
        .zip(trajectory.timestamps_us().par_iter())
        .map(|(pose, &t)| {
            let mut frame =
                render_intensity(mesh, &scene.albedo, &background, pose, k, &scene.light_dir)?;
            frame.timestamp_us = t;
            Ok(RenderedView { frame, mask: rasterize_silhouette(mesh, pose, k), pose: *pose })
        })
        .collect()
}
