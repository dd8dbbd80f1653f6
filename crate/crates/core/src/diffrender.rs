//! Differentiable soft silhouette rasterizer.
//!
//! Every front-facing triangle contributes `D = sigmoid(±d² / σ)` to the
//! pixels near it, where `d` is the NDC distance from the pixel centre to
//! the projected triangle boundary (positive sign inside). Contributions are
//! aggregated as `1 - Π(1 - D)`. Gradients with respect to world-space
//! vertex positions are obtained analytically.
//!
//! Work is split by image row. Rows are evaluated in parallel but their
//! per-vertex gradient contributions are merged in row order, so results are
//! bit-identical for any thread count.

use rayon::prelude::*;

use crate::camera::{CameraPose, Intrinsics};
use crate::geometry::TriangleMesh;
use crate::image::SilhouetteMask;
use crate::render::{pixel_span, NEAR_PLANE};
use crate::Vec3;

/// Probability below which a face's influence is cut off.
pub const PROBABILITY_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftRenderConfig {
    /// Sigmoid sharpness in squared NDC units.
    pub sigma: f64,
    /// Influence radius in pixels; derived from `sigma` and
    /// [`PROBABILITY_CUTOFF`] when `None`.
    pub support_px: Option<f64>,
}

impl Default for SoftRenderConfig {
    fn default() -> Self {
        Self { sigma: 1e-4, support_px: None }
    }
}

impl SoftRenderConfig {
    pub fn with_sigma(sigma: f64) -> Self {
        Self { sigma, support_px: None }
    }

    /// Squared-NDC distance at which `sigmoid(-d²/σ)` drops to the cutoff.
    pub fn blur_radius(&self) -> f64 {
        (1.0 / PROBABILITY_CUTOFF - 1.0).ln() * self.sigma
    }

    /// NDC units per pixel; NDC spans `[-1, 1]` across the shorter image side.
    pub fn ndc_per_pixel(k: &Intrinsics) -> f64 {
        2.0 / k.width.min(k.height) as f64
    }

    pub fn support_radius_px(&self, k: &Intrinsics) -> f64 {
        self.support_px
            .unwrap_or_else(|| self.blur_radius().sqrt() / Self::ndc_per_pixel(k))
    }
}

/// Per-vertex `∂loss/∂vertex` in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub grads: Vec<Vec3>,
}

impl GradientMap {
    pub fn zeros(n: usize) -> Self {
        Self { grads: vec![Vec3::zeros(); n] }
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|c| *c == 0.0))
    }
}

struct SoftFace {
    vertices: [usize; 3],
    pts: [[f64; 2]; 3],
    x_range: (usize, usize),
}

struct Setup {
    view: Vec<Vec3>,
    faces: Vec<SoftFace>,
    /// Per image row, indices into `faces` (ascending).
    rows: Vec<Vec<u32>>,
    /// `s² / σ` with `s` the NDC size of a pixel.
    scale: f64,
    support: f64,
}

fn setup(mesh: &TriangleMesh, pose: &CameraPose, k: &Intrinsics, cfg: &SoftRenderConfig) -> Setup {
    let view: Vec<Vec3> = mesh.vertices().iter().map(|p| pose.to_view(p)).collect();
    let support = cfg.support_radius_px(k);
    let s = SoftRenderConfig::ndc_per_pixel(k);
    let mut faces = Vec::new();
    let mut rows = vec![Vec::new(); k.height];
    for f in mesh.faces() {
        let [a, b, c] = [view[f[0]], view[f[1]], view[f[2]]];
        if a.z <= NEAR_PLANE || b.z <= NEAR_PLANE || c.z <= NEAR_PLANE {
            continue;
        }
        // back faces: the outward normal points away from the camera centre
        if (b - a).cross(&(c - a)).dot(&a) >= 0.0 {
            continue;
        }
        let pts = [a, b, c].map(|q| [k.focal * q.x / q.z + k.cx, k.focal * q.y / q.z + k.cy]);
        let area = cross2(sub(pts[1], pts[0]), sub(pts[2], pts[0]));
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let lo = |i: usize| pts[0][i].min(pts[1][i]).min(pts[2][i]) - support;
        let hi = |i: usize| pts[0][i].max(pts[1][i]).max(pts[2][i]) + support;
        let (Some(x_range), Some(y_range)) = (pixel_span(lo(0), hi(0), k.width), pixel_span(lo(1), hi(1), k.height))
        else {
            continue;
        };
        let id = faces.len() as u32;
        faces.push(SoftFace { vertices: *f, pts, x_range });
        for row in &mut rows[y_range.0..y_range.1] {
            row.push(id);
        }
    }
    Setup { view, faces, rows, scale: s * s / cfg.sigma, support }
}

#[inline]
fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Pixel/triangle relation needed by both passes.
struct Contact {
    d2: f64,
    inside: bool,
    edge: usize,
    t: f64,
    /// `p - closest boundary point`, in pixels.
    diff: [f64; 2],
}

#[inline]
fn contact(p: [f64; 2], pts: &[[f64; 2]; 3]) -> Contact {
    let mut best = Contact { d2: f64::INFINITY, inside: false, edge: 0, t: 0.0, diff: [0.0; 2] };
    let mut signs = [0.0; 3];
    for k in 0..3 {
        let a = pts[k];
        let b = pts[(k + 1) % 3];
        let ab = sub(b, a);
        let ap = sub(p, a);
        signs[k] = cross2(ab, ap);
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let diff = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
        let d2 = diff[0] * diff[0] + diff[1] * diff[1];
        if d2 < best.d2 {
            best = Contact { d2, inside: false, edge: k, t, diff };
        }
    }
    best.inside = (signs[0] > 0.0 && signs[1] > 0.0 && signs[2] > 0.0)
        || (signs[0] < 0.0 && signs[1] < 0.0 && signs[2] < 0.0);
    best
}

/// `(sigmoid(z), 1 - sigmoid(z))` without cancellation.
#[inline]
fn sigmoid_pair(z: f64) -> (f64, f64) {
    if z >= 0.0 {
        let e = (-z).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = z.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

impl Setup {
    /// Calls `f(x, face, contact, D, 1 - D)` for every influencing pair in row `y`.
    #[inline]
    fn for_each_in_row(&self, y: usize, mut f: impl FnMut(usize, &SoftFace, &Contact, f64, f64)) {
        let py = y as f64 + 0.5;
        let support2 = self.support * self.support;
        for &fi in &self.rows[y] {
            let face = &self.faces[fi as usize];
            for x in face.x_range.0..face.x_range.1 {
                let c = contact([x as f64 + 0.5, py], &face.pts);
                if !c.inside && c.d2 > support2 {
                    continue;
                }
                let z = if c.inside { c.d2 } else { -c.d2 } * self.scale;
                let (d, one_minus) = sigmoid_pair(z);
                f(x, face, &c, d, one_minus);
            }
        }
    }
}

/// Soft silhouette probability map.
pub fn soft_rasterize(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &SoftRenderConfig,
) -> SilhouetteMask {
    let st = setup(mesh, pose, k, cfg);
    let data: Vec<f64> = (0..k.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut keep = vec![1.0f64; k.width];
            st.for_each_in_row(y, |x, _, _, _, one_minus| keep[x] *= one_minus);
            keep.into_iter().map(|v| 1.0 - v)
        })
        .collect();
    SilhouetteMask { width: k.width, height: k.height, data }
}

/// Factors `1 - D` below this are treated as exact zeros when forming
/// leave-one-out products.
const SATURATED: f64 = 1e-150;

/// Back-propagates `upstream = ∂loss/∂probability` to world vertex positions.
pub fn soft_rasterize_backward(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    k: &Intrinsics,
    cfg: &SoftRenderConfig,
    upstream: &[f64],
) -> GradientMap {
    assert_eq!(upstream.len(), k.pixel_count(), "upstream gradient must cover the image");
    let st = setup(mesh, pose, k, cfg);
    let w = k.width;
    let row_grads: Vec<Vec<(u32, [[f64; 2]; 3])>> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            let up = &upstream[y * w..(y + 1) * w];
            if st.rows[y].is_empty() || up.iter().all(|g| *g == 0.0) {
                return Vec::new();
            }
            // leave-one-out products: product of non-saturated factors and
            // the number of saturated ones
            let mut keep = vec![1.0f64; w];
            let mut zeros = vec![0u32; w];
            st.for_each_in_row(y, |x, _, _, _, one_minus| {
                if one_minus < SATURATED {
                    zeros[x] += 1;
                } else {
                    keep[x] *= one_minus;
                }
            });
            let mut acc: Vec<(u32, [[f64; 2]; 3])> = Vec::new();
            let mut current: Option<(u32, [[f64; 2]; 3])> = None;
            for &fi in &st.rows[y] {
                let face = &st.faces[fi as usize];
                let mut g = [[0.0f64; 2]; 3];
                let mut touched = false;
                let py = y as f64 + 0.5;
                for x in face.x_range.0..face.x_range.1 {
                    if up[x] == 0.0 {
                        continue;
                    }
                    let c = contact([x as f64 + 0.5, py], &face.pts);
                    if !c.inside && c.d2 > st.support * st.support {
                        continue;
                    }
                    let sign = if c.inside { 1.0 } else { -1.0 };
                    let (d, one_minus) = sigmoid_pair(sign * c.d2 * st.scale);
                    let others = if one_minus < SATURATED {
                        if zeros[x] == 1 { keep[x] } else { 0.0 }
                    } else if zeros[x] == 0 {
                        keep[x] / one_minus
                    } else {
                        0.0
                    };
                    // dP/dD * dD/d(d²)
                    let coeff = up[x] * others * sign * st.scale * d * one_minus;
                    if coeff == 0.0 {
                        continue;
                    }
                    let (a, b) = (c.edge, (c.edge + 1) % 3);
                    let wa = -2.0 * (1.0 - c.t) * coeff;
                    let wb = -2.0 * c.t * coeff;
                    g[a][0] += wa * c.diff[0];
                    g[a][1] += wa * c.diff[1];
                    g[b][0] += wb * c.diff[0];
                    g[b][1] += wb * c.diff[1];
                    touched = true;
                }
                if touched {
                    if let Some(prev) = current.take() {
                        acc.push(prev);
                    }
                    current = Some((fi, g));
                }
            }
            acc.extend(current);
            acc
        })
        .collect();

    let mut screen = vec![[0.0f64; 2]; mesh.vertices().len()];
    for row in &row_grads {
        for (fi, g) in row {
            let face = &st.faces[*fi as usize];
            for (corner, vi) in face.vertices.iter().enumerate() {
                screen[*vi][0] += g[corner][0];
                screen[*vi][1] += g[corner][1];
            }
        }
    }
    let r_t = pose.rotation_matrix().transpose();
    let grads = screen
        .iter()
        .zip(&st.view)
        .map(|(g, q)| {
            if g[0] == 0.0 && g[1] == 0.0 {
                return Vec3::zeros();
            }
            let f = k.focal / q.z;
            let g_view = Vec3::new(g[0] * f, g[1] * f, -(g[0] * q.x + g[1] * q.y) * f / q.z);
            r_t * g_view
        })
        .collect();
    GradientMap { grads }
}
