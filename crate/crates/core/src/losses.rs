//! Silhouette, regularization and pose losses.

use crate::camera::{CameraPose, Intrinsics};
use crate::diffrender::{soft_rasterize, soft_rasterize_backward, SoftRenderConfig};
use crate::error::{invalid, Result};
use crate::geometry::TriangleMesh;
use crate::image::SilhouetteMask;
use crate::Vec3;

/// Stabilizer in the IoU denominator so empty masks do not divide by zero.
pub const IOU_EPS: f64 = 1e-6;

/// Clamp applied to predicted probabilities in the cross entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub iou: f64,
    pub lap: f64,
    pub smooth: f64,
    pub shape: f64,
    /// Translation balance of the pose loss.
    pub beta: f64,
    /// Rotation balance of the pose loss.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { iou: 1.0, lap: 1.0, smooth: 1e-2, shape: 1.2, beta: 0.0, gamma: -3.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.iou, self.lap, self.smooth, self.shape, self.beta, self.gamma];
        if all.iter().any(|v| !v.is_finite()) {
            return invalid("loss weights must be finite");
        }
        if [self.iou, self.lap, self.smooth, self.shape].iter().any(|v| *v < 0.0) {
            return invalid("loss weights must be non-negative");
        }
        Ok(())
    }
}

/// Negative IoU `1 - |gt ⊗ pred| / (|gt ⊕ pred - gt ⊗ pred| + eps)` and its
/// gradient with respect to every `pred` pixel.
pub fn loss_iou(gt: &SilhouetteMask, pred: &SilhouetteMask) -> Result<(f64, Vec<f64>)> {
    if !gt.same_dims(pred) {
        return invalid(format!(
            "mask dimensions differ: {}x{} vs {}x{}",
            gt.width, gt.height, pred.width, pred.height
        ));
    }
    let mut inter = 0.0;
    let mut union = IOU_EPS;
    for (g, m) in gt.data.iter().zip(&pred.data) {
        inter += g * m;
        union += g + m - g * m;
    }
    let grad = gt
        .data
        .iter()
        .map(|g| -(g * union - inter * (1.0 - g)) / (union * union))
        .collect();
    Ok((1.0 - inter / union, grad))
}

/// Mean squared uniform-Laplacian coordinate `|v_i - mean(N(i))|²`.
pub fn loss_laplacian(mesh: &TriangleMesh) -> Result<(f64, Vec<Vec3>)> {
    let verts = mesh.vertices();
    let n = verts.len();
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut delta = Vec::with_capacity(n);
    for i in 0..n {
        let nb = mesh.neighbors(i);
        if nb.is_empty() {
            return invalid(format!("vertex {i} has no neighbours"));
        }
        let mean = nb.iter().map(|&j| verts[j]).sum::<Vec3>() / nb.len() as f64;
        delta.push(verts[i] - mean);
    }
    let scale = 2.0 / n as f64;
    let mut grad: Vec<Vec3> = delta.iter().map(|d| d * scale).collect();
    for i in 0..n {
        let nb = mesh.neighbors(i);
        let share = delta[i] * (scale / nb.len() as f64);
        for &j in nb {
            grad[j] -= share;
        }
    }
    let value = delta.iter().map(|d| d.norm_squared()).sum::<f64>() / n as f64;
    Ok((value, grad))
}

/// Sum over interior edges of `(cos θ + 1)²` with `θ` the dihedral angle
/// (`π` for coplanar neighbours). Boundary edges are skipped.
pub fn loss_flatten(mesh: &TriangleMesh) -> (f64, Vec<Vec3>) {
    let verts = mesh.vertices();
    let mut grad = vec![Vec3::zeros(); verts.len()];
    let normals: Vec<(Vec3, f64)> = (0..mesh.faces().len())
        .map(|f| {
            let n = mesh.face_normal(f);
            let len = n.norm();
            (if len > 0.0 { n / len } else { Vec3::zeros() }, len)
        })
        .collect();
    let mut value = 0.0;
    let mut face_grad = vec![Vec3::zeros(); mesh.faces().len()];
    for e in mesh.edges() {
        let [f1, f2] = match e.faces.as_slice() {
            [a, b] => [*a, *b],
            _ => continue,
        };
        // cos θ = -n1·n2 for consistently wound neighbours
        let c = normals[f1].0.dot(&normals[f2].0);
        let r = 1.0 - c;
        value += r * r;
        let d_c = -2.0 * r;
        face_grad[f1] += normals[f2].0 * d_c;
        face_grad[f2] += normals[f1].0 * d_c;
    }
    for (f, g_unit) in face_grad.iter().enumerate() {
        let (n_hat, len) = normals[f];
        if len == 0.0 || g_unit.norm_squared() == 0.0 {
            continue;
        }
        // through the normalization, then through n = (b - a) x (c - a)
        let g = (g_unit - n_hat * n_hat.dot(g_unit)) / len;
        let [ia, ib, ic] = mesh.faces()[f];
        let e1 = verts[ib] - verts[ia];
        let e2 = verts[ic] - verts[ia];
        let gb = e2.cross(&g);
        let gc = g.cross(&e1);
        grad[ib] += gb;
        grad[ic] += gc;
        grad[ia] -= gb + gc;
    }
    (value, grad)
}

/// Value and gradient of the weighted mesh objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    /// Mean negative IoU over the batch (unweighted).
    pub iou: f64,
    pub lap: f64,
    pub smooth: f64,
    pub grad: Vec<Vec3>,
}

/// `λ_IoU · mean_b L_IoU(S_b, π(M | p_b)) + λ_lap · L_lap + λ_smooth · L_smooth`.
pub fn mesh_objective<'a>(
    mesh: &TriangleMesh,
    batch: &[(&'a SilhouetteMask, &'a CameraPose)],
    k: &Intrinsics,
    cfg: &SoftRenderConfig,
    w: &LossWeights,
) -> Result<ObjectiveValue> {
    if batch.is_empty() {
        return invalid("objective needs at least one view");
    }
    w.validate()?;
    let n = mesh.vertices().len();
    let mut grad = vec![Vec3::zeros(); n];
    let mut iou = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for (gt, pose) in batch {
        let pred = soft_rasterize(mesh, pose, k, cfg);
        let (l, mut d_pred) = loss_iou(gt, &pred)?;
        iou += l * inv_b;
        if w.iou == 0.0 {
            continue;
        }
        let s = w.iou * inv_b;
        d_pred.iter_mut().for_each(|g| *g *= s);
        let g = soft_rasterize_backward(mesh, pose, k, cfg, &d_pred);
        for (acc, gi) in grad.iter_mut().zip(&g.grads) {
            *acc += gi;
        }
    }
    let (lap, lap_grad) = if w.lap != 0.0 { loss_laplacian(mesh)? } else { (0.0, Vec::new()) };
    for (acc, g) in grad.iter_mut().zip(&lap_grad) {
        *acc += g * w.lap;
    }
    let (smooth, smooth_grad) = if w.smooth != 0.0 { loss_flatten(mesh) } else { (0.0, Vec::new()) };
    for (acc, g) in grad.iter_mut().zip(&smooth_grad) {
        *acc += g * w.smooth;
    }
    Ok(ObjectiveValue {
        total: w.iou * iou + w.lap * lap + w.smooth * smooth,
        iou,
        lap,
        smooth,
        grad,
    })
}

/// Mean binary cross entropy of probabilities `pred` against `gt`.
pub fn loss_bce(gt: &SilhouetteMask, pred: &SilhouetteMask) -> Result<f64> {
    if !gt.same_dims(pred) || gt.data.is_empty() {
        return invalid("masks must be non-empty with equal dimensions");
    }
    let sum: f64 = gt
        .data
        .iter()
        .zip(&pred.data)
        .map(|(s, p)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(s * p.ln() + (1.0 - s) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / gt.data.len() as f64)
}

fn aligned(q: [f64; 4], reference: [f64; 4]) -> [f64; 4] {
    let dot: f64 = q.iter().zip(&reference).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        q.map(|c| -c)
    } else {
        q
    }
}

fn l1<const N: usize>(a: [f64; N], b: [f64; N]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

fn weighted_pose_loss(dt: f64, dq: f64, beta: f64, gamma: f64) -> f64 {
    dt * (-beta).exp() + beta + dq * (-gamma).exp() + gamma
}

/// `|t - t̂|₁ e^-β + β + |q - q̂|₁ e^-γ + γ`, with `q̂` sign-aligned to `q`.
pub fn loss_abs(p: &CameraPose, p_hat: &CameraPose, beta: f64, gamma: f64) -> f64 {
    let q = p.wxyz();
    let q_hat = aligned(p_hat.wxyz(), q);
    let dt = l1(p.translation.into(), p_hat.translation.into());
    weighted_pose_loss(dt, l1(q, q_hat), beta, gamma)
}

/// The absolute loss applied to component-wise relative poses
/// `r_ik = (t_i - t_k, q_i - q_k)` and their predictions.
pub fn loss_rel(
    p_i: &CameraPose,
    p_k: &CameraPose,
    p_hat_i: &CameraPose,
    p_hat_k: &CameraPose,
    beta: f64,
    gamma: f64,
) -> f64 {
    let (qi, qk) = (p_i.wxyz(), p_k.wxyz());
    let (qhi, qhk) = (aligned(p_hat_i.wxyz(), qi), aligned(p_hat_k.wxyz(), qk));
    let diff4 = |a: [f64; 4], b: [f64; 4]| [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]];
    let rt: [f64; 3] = (p_i.translation - p_k.translation).into();
    let rt_hat: [f64; 3] = (p_hat_i.translation - p_hat_k.translation).into();
    let dt = l1(rt, rt_hat);
    let dq = l1(diff4(qi, qk), diff4(qhi, qhk));
    weighted_pose_loss(dt, dq, beta, gamma)
}

/// Sum over views of the negative IoU between ground truth and the soft
/// render of `mesh`.
pub fn loss_shape(
    gt: &[SilhouetteMask],
    mesh: &TriangleMesh,
    poses: &[CameraPose],
    k: &Intrinsics,
    cfg: &SoftRenderConfig,
) -> Result<f64> {
    if gt.len() != poses.len() {
        return invalid(format!("{} masks but {} poses", gt.len(), poses.len()));
    }
    gt.iter()
        .zip(poses)
        .map(|(m, p)| loss_iou(m, &soft_rasterize(mesh, p, k, cfg)).map(|(l, _)| l))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct E2sComponents {
    pub bce: f64,
    pub abs: f64,
    pub rel: f64,
    pub shape: f64,
}

/// `L_bce + L_abs + L_rel + λ_shape · L_shape`.
pub fn loss_e2s_total(c: &E2sComponents, lambda_shape: f64) -> Result<f64> {
    if !(lambda_shape >= 0.0 && lambda_shape.is_finite()) {
        return invalid(format!("shape weight must be non-negative, got {lambda_shape}"));
    }
    if [c.bce, c.abs, c.rel, c.shape].iter().any(|v| !v.is_finite()) {
        return invalid("loss components must be finite");
    }
    Ok(c.bce + c.abs + c.rel + c.shape * lambda_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::look_at;
    use crate::geometry::{make_cube, make_icosphere};
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(w: usize, h: usize, on: &[usize]) -> SilhouetteMask {
        let mut m = SilhouetteMask::zeros(w, h);
        for &i in on {
            m.data[i] = 1.0;
        }
        m
    }

    #[test]
    fn iou_examples() {
        let a = mask(4, 4, &[1, 2, 5]);
        assert!(loss_iou(&a, &a).unwrap().0.abs() < 1e-6);
        let b = mask(4, 4, &[9, 10]);
        assert!((loss_iou(&a, &b).unwrap().0 - 1.0).abs() < 1e-6);
        let gt = mask(4, 4, &[3, 4]);
        let pred = mask(4, 4, &[3]);
        assert!((loss_iou(&gt, &pred).unwrap().0 - 0.5).abs() < 1e-6);
        assert!(loss_iou(&gt, &SilhouetteMask::zeros(3, 4)).is_err());
    }

    proptest! {
        #[test]
        fn iou_bounded_and_symmetric(bits_a in prop::collection::vec(any::<bool>(), 30), bits_b in prop::collection::vec(any::<bool>(), 30)) {
            let to_mask = |bits: &[bool]| SilhouetteMask { width: 6, height: 5, data: bits.iter().map(|&b| f64::from(u8::from(b))).collect() };
            let (a, b) = (to_mask(&bits_a), to_mask(&bits_b));
            let ab = loss_iou(&a, &b).unwrap().0;
            let ba = loss_iou(&b, &a).unwrap().0;
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + h;
                let up = f(&probe);
                probe[i] = x[i] - h;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs())) / scale
    }

    fn flat(v: &[Vec3]) -> Vec<f64> {
        v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    fn with_coords(mesh: &TriangleMesh, x: &[f64]) -> TriangleMesh {
        let mut m = mesh.clone();
        for (v, c) in m.vertices_mut().iter_mut().zip(x.chunks_exact(3)) {
            *v = Vec3::new(c[0], c[1], c[2]);
        }
        m
    }

    fn jittered_sphere(sub: u32, seed: u64, amount: f64) -> TriangleMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        make_icosphere(sub, 0.5).unwrap().map_vertices(|v| {
            v + Vec3::new(rng.random_range(-amount..amount), rng.random_range(-amount..amount), rng.random_range(-amount..amount))
        })
    }

    #[test]
    fn iou_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = SilhouetteMask::from_fn(5, 4, |_, _| f64::from(u8::from(rng.random::<bool>())));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pred = SilhouetteMask::from_fn(5, 4, |_, _| rng.random::<f64>());
        let (_, analytic) = loss_iou(&gt, &pred).unwrap();
        let f = |x: &[f64]| loss_iou(&gt, &SilhouetteMask { width: 5, height: 4, data: x.to_vec() }).unwrap().0;
        let numeric = central_difference(f, &pred.data, 1e-6);
        assert!(max_relative_error(&analytic, &numeric) < 1e-6);
    }

    /// Direct evaluation with neighbour sets rebuilt from the face list.
    fn laplacian_oracle(mesh: &TriangleMesh) -> f64 {
        let n = mesh.vertices().len();
        let mut nb = vec![std::collections::BTreeSet::new(); n];
        for f in mesh.faces() {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        nb[f[a]].insert(f[b]);
                    }
                }
            }
        }
        let v = mesh.vertices();
        (0..n)
            .map(|i| {
                let mut mean = Vec3::zeros();
                for &j in &nb[i] {
                    mean += v[j];
                }
                (v[i] - mean / nb[i].len() as f64).norm_squared()
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn laplacian_examples() {
        let tetra = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
                Vec3::new(0.5, 3f64.sqrt() / 6.0, (2.0f64 / 3.0).sqrt()),
            ],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]],
        )
        .unwrap();
        let (v, _) = loss_laplacian(&tetra).unwrap();
        assert!((v - laplacian_oracle(&tetra)).abs() < 1e-15);
        // regular tetrahedron edge 1: |v - centroid of others| = 4/3 * circumradius
        let r = (3.0f64 / 8.0).sqrt();
        assert!((v - (4.0 / 3.0 * r).powi(2)).abs() < 1e-12);

        let collapsed = tetra.map_vertices(|_| Vec3::new(0.2, 0.3, 0.4));
        assert!(loss_laplacian(&collapsed).unwrap().0 < 1e-30);

        let isolated = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(loss_laplacian(&isolated).is_err());
    }

    #[test]
    fn symmetric_ring_contributes_nothing() {
        // centre vertex of a flat hexagonal fan sits at its neighbours' mean
        let mut verts = vec![Vec3::zeros()];
        for i in 0..6 {
            let a = i as f64 * std::f64::consts::TAU / 6.0;
            verts.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let faces: Vec<[usize; 3]> = (0..6).map(|i| [0, 1 + i, 1 + (i + 1) % 6]).collect();
        let fan = TriangleMesh::new(verts, faces).unwrap();
        let n = fan.neighbors(0);
        let mean = n.iter().map(|&j| fan.vertices()[j]).sum::<Vec3>() / n.len() as f64;
        assert!((fan.vertices()[0] - mean).norm() < 1e-15);
        assert_eq!(loss_flatten(&fan).0, 0.0);
    }

    /// Dihedral cosine from the in-plane perpendiculars of the two opposite
    /// vertices (independent of the normal-based implementation).
    fn flatten_oracle(mesh: &TriangleMesh) -> f64 {
        let v = mesh.vertices();
        let faces = mesh.faces();
        let mut total = 0.0;
        for i in 0..faces.len() {
            for j in i + 1..faces.len() {
                let shared: Vec<usize> = faces[i].iter().copied().filter(|a| faces[j].contains(a)).collect();
                if shared.len() != 2 {
                    continue;
                }
                let other = |f: &[usize; 3]| *f.iter().find(|a| !shared.contains(a)).unwrap();
                let (a, b) = (v[shared[0]], v[shared[1]]);
                let axis = (b - a).normalize();
                let perp = |p: Vec3| {
                    let d = p - a;
                    d - axis * d.dot(&axis)
                };
                let b1 = perp(v[other(&faces[i])]);
                let b2 = perp(v[other(&faces[j])]);
                let cos = b1.dot(&b2) / (b1.norm() * b2.norm());
                total += (cos + 1.0).powi(2);
            }
        }
        total
    }

    #[test]
    fn flatten_examples() {
        let fold = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)],
            vec![[0, 2, 1], [0, 1, 3]],
        )
        .unwrap();
        assert!((loss_flatten(&fold).0 - 1.0).abs() < 1e-12);
        let cube = make_cube(0.5).unwrap();
        let (value, _) = loss_flatten(&cube);
        assert!((value - flatten_oracle(&cube)).abs() < 1e-12);
        assert!((value - 12.0).abs() < 1e-12);
        let sphere = jittered_sphere(1, 4, 0.05);
        assert!((loss_flatten(&sphere).0 - flatten_oracle(&sphere)).abs() < 1e-10);
    }

    #[test]
    fn flatten_vanishes_only_on_flat_grids() {
        let mut verts = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                verts.push(Vec3::new(x as f64, y as f64, 0.0));
            }
        }
        let mut faces = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                let i = y * 4 + x;
                faces.push([i, i + 1, i + 5]);
                faces.push([i, i + 5, i + 4]);
            }
        }
        let grid = TriangleMesh::new(verts, faces).unwrap();
        assert_eq!(loss_flatten(&grid).0, 0.0);
        let mut bumped = grid.clone();
        bumped.vertices_mut()[5].z = 0.3;
        assert!(loss_flatten(&bumped).0 > 0.0);
    }

    #[test]
    fn regularizers_are_rigid_invariant() {
        let mesh = jittered_sphere(2, 8, 0.05);
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let moved = mesh.map_vertices(|v| q * v + Vec3::new(3.0, -2.0, 0.7));
        assert!((loss_laplacian(&mesh).unwrap().0 - loss_laplacian(&moved).unwrap().0).abs() < 1e-9);
        assert!((loss_flatten(&mesh).0 - loss_flatten(&moved).0).abs() < 1e-9);
    }

    #[test]
    fn regularizer_gradients_match_finite_differences() {
        for seed in 0..5 {
            let mesh = jittered_sphere(1, seed, 0.08);
            let x = flat(mesh.vertices());
            let (_, g) = loss_laplacian(&mesh).unwrap();
            let numeric = central_difference(|x| loss_laplacian(&with_coords(&mesh, x)).unwrap().0, &x, 1e-6);
            assert!(max_relative_error(&flat(&g), &numeric) < 1e-6);
            let (_, g) = loss_flatten(&mesh);
            let numeric = central_difference(|x| loss_flatten(&with_coords(&mesh, x)).0, &x, 1e-6);
            assert!(max_relative_error(&flat(&g), &numeric) < 1e-5);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let k = Intrinsics::square(24, 24.0).unwrap();
        let cfg = SoftRenderConfig { sigma: 2e-3, support_px: Some(1e3) };
        let mesh = jittered_sphere(1, 11, 0.05);
        let gt_mesh = make_icosphere(2, 0.45).unwrap().translated(Vec3::new(0.05, -0.03, 0.0));
        let poses: Vec<CameraPose> = [(0.0, 0.3, 2.0), (1.6, -0.4, 1.0)]
            .iter()
            .map(|&(x, y, z)| look_at(&Vec3::new(x, y, z), &Vec3::zeros(), &Vec3::y()).unwrap())
            .collect();
        let gts: Vec<SilhouetteMask> = poses.iter().map(|p| crate::render::rasterize_silhouette(&gt_mesh, p, &k)).collect();
        let batch: Vec<(&SilhouetteMask, &CameraPose)> = gts.iter().zip(&poses).collect();
        let w = LossWeights { smooth: 0.1, ..Default::default() };
        let out = mesh_objective(&mesh, &batch, &k, &cfg, &w).unwrap();
        let f = |x: &[f64]| mesh_objective(&with_coords(&mesh, x), &batch, &k, &cfg, &w).unwrap().total;
        let numeric = central_difference(f, &flat(mesh.vertices()), 1e-6);
        let err = max_relative_error(&flat(&out.grad), &numeric);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn objective_with_zero_weights_is_zero() {
        let k = Intrinsics::square(32, 32.0).unwrap();
        let mesh = make_icosphere(1, 0.5).unwrap();
        let pose = look_at(&Vec3::new(0.0, 0.0, 2.0), &Vec3::zeros(), &Vec3::y()).unwrap();
        let gt = SilhouetteMask::ones(32, 32);
        let w = LossWeights { iou: 0.0, lap: 0.0, smooth: 0.0, ..Default::default() };
        let out = mesh_objective(&mesh, &[(&gt, &pose)], &k, &SoftRenderConfig::default(), &w).unwrap();
        assert_eq!(out.total, 0.0);
        assert!(out.grad.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn objective_rejects_empty_batch() {
        let k = Intrinsics::square(8, 8.0).unwrap();
        let mesh = make_icosphere(0, 0.5).unwrap();
        assert!(mesh_objective(&mesh, &[], &k, &SoftRenderConfig::default(), &LossWeights::default()).is_err());
    }

    #[test]
    fn bce_examples() {
        let gt = mask(3, 3, &[0, 4, 8]);
        assert!(loss_bce(&gt, &gt).unwrap() <= 1e-6);
        let half = SilhouetteMask { width: 3, height: 3, data: vec![0.5; 9] };
        assert!((loss_bce(&gt, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred = SilhouetteMask::from_fn(3, 3, |_, _| rng.random_range(0.01..0.99));
        let direct: f64 = (0..9)
            .map(|i| {
                let (s, p) = (gt.data[i], pred.data[i]);
                -(s * p.ln() + (1.0 - s) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 9.0;
        assert!((loss_bce(&gt, &pred).unwrap() - direct).abs() < 1e-12);
        assert!(loss_bce(&gt, &SilhouetteMask::zeros(2, 2)).is_err());
    }

    fn pose(t: [f64; 3], q: [f64; 4]) -> CameraPose {
        CameraPose::new(Vec3::from(t), q).unwrap()
    }

    #[test]
    fn abs_examples() {
        let p = pose([0.1, 0.2, 0.3], [0.9, 0.1, -0.3, 0.2]);
        assert_eq!(loss_abs(&p, &p, 0.0, 0.0), 0.0);
        let shifted = CameraPose { translation: p.translation + Vec3::x(), ..p };
        assert!((loss_abs(&p, &shifted, 0.0, 0.0) - 1.0).abs() < 1e-12);
        let ln2 = std::f64::consts::LN_2;
        assert!((loss_abs(&p, &shifted, ln2, 0.0) - (0.5 + ln2)).abs() < 1e-12);
        // -q is the same rotation
        let negated = CameraPose { rotation: UnitQuaternion::new_unchecked(-p.rotation.into_inner()), ..p };
        assert!(loss_abs(&p, &negated, 0.0, 0.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn abs_lower_bound(t in prop::array::uniform3(-2.0f64..2.0), q in prop::array::uniform4(-1.0f64..1.0),
                           th in prop::array::uniform3(-2.0f64..2.0), qh in prop::array::uniform4(-1.0f64..1.0),
                           beta in -2.0f64..2.0, gamma in -3.0f64..1.0) {
            prop_assume!(q.iter().map(|c| c * c).sum::<f64>() > 1e-2 && qh.iter().map(|c| c * c).sum::<f64>() > 1e-2);
            let (p, ph) = (pose(t, q), pose(th, qh));
            prop_assert!(loss_abs(&p, &ph, beta, gamma) >= beta + gamma - 1e-12);
            prop_assert!((loss_abs(&p, &p, beta, gamma) - (beta + gamma)).abs() < 1e-12);
        }
    }

    #[test]
    fn rel_examples() {
        let pi = pose([1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        let pk = pose([0.0, 1.0, 0.5], [0.8, 0.2, 0.1, 0.0]);
        assert_eq!(loss_rel(&pi, &pk, &pi, &pk, 0.0, 0.0), 0.0);
        assert!((loss_rel(&pi, &pk, &pi, &pk, 0.3, -1.0) - (0.3 - 1.0)).abs() < 1e-15);
        let bias = Vec3::new(0.4, -0.2, 0.9);
        let bi = CameraPose { translation: pi.translation + bias, ..pi };
        let bk = CameraPose { translation: pk.translation + bias, ..pk };
        assert!(loss_rel(&pi, &pk, &bi, &bk, 0.0, 0.0).abs() < 1e-15);

        let hi = pose([0.9, 0.1, 0.2], [0.95, 0.05, 0.0, 0.1]);
        let hk = pose([0.1, 1.1, 0.4], [0.7, 0.3, 0.1, 0.1]);
        let (beta, gamma) = (0.2, -0.5);
        let (qi, qk, qhi, qhk) = (pi.wxyz(), pk.wxyz(), hi.wxyz(), hk.wxyz());
        let mut dt = 0.0;
        for a in 0..3 {
            dt += ((pi.translation[a] - pk.translation[a]) - (hi.translation[a] - hk.translation[a])).abs();
        }
        let mut dq = 0.0;
        for a in 0..4 {
            dq += ((qi[a] - qk[a]) - (qhi[a] - qhk[a])).abs();
        }
        let direct = dt * (-beta as f64).exp() + beta + dq * (-gamma as f64).exp() + gamma;
        assert!((loss_rel(&pi, &pk, &hi, &hk, beta, gamma) - direct).abs() < 1e-12);
    }

    #[test]
    fn shape_loss_examples() {
        let k = Intrinsics::square(64, 64.0).unwrap();
        let cfg = SoftRenderConfig::with_sigma(1e-7);
        let mesh = make_icosphere(3, 0.5).unwrap();
        let poses: Vec<CameraPose> = [(2.0, 0.0, 0.0), (0.0, 0.5, 2.0), (-1.4, 0.3, -1.4)]
            .iter()
            .map(|&(x, y, z)| look_at(&Vec3::new(x, y, z), &Vec3::zeros(), &Vec3::y()).unwrap())
            .collect();
        let gt: Vec<SilhouetteMask> = poses.iter().map(|p| crate::render::rasterize_silhouette(&mesh, p, &k)).collect();
        let l = loss_shape(&gt, &mesh, &poses, &k, &cfg).unwrap();
        assert!(l <= 0.05 * 3.0, "{l}");
        let empty = loss_shape(&gt, &TriangleMesh::empty(), &poses, &k, &cfg).unwrap();
        assert!((empty - 3.0).abs() < 1e-6);
        let single = loss_shape(&gt[..1], &mesh, &poses[..1], &k, &cfg).unwrap();
        let direct = loss_iou(&gt[0], &soft_rasterize(&mesh, &poses[0], &k, &cfg)).unwrap().0;
        assert_eq!(single, direct);
        assert!(loss_shape(&gt[..2], &mesh, &poses, &k, &cfg).is_err());
    }

    #[test]
    fn e2s_total_examples() {
        let zero = E2sComponents { bce: 0.0, abs: 0.0, rel: 0.0, shape: 0.0 };
        assert_eq!(loss_e2s_total(&zero, 1.2).unwrap(), 0.0);
        let ones = E2sComponents { bce: 1.0, abs: 1.0, rel: 1.0, shape: 1.0 };
        assert!((loss_e2s_total(&ones, 1.2).unwrap() - 4.2).abs() < 1e-12);
        assert!(loss_e2s_total(&ones, -0.1).is_err());
    }
}
