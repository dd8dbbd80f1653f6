//! Template mesh deformation against silhouette views.

use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{look_at, CameraPose, Intrinsics};
use crate::diffrender::SoftRenderConfig;
use crate::error::{invalid, Error, Result};
use crate::geometry::{make_icosphere, TriangleMesh};
use crate::image::SilhouetteMask;
use crate::losses::{mesh_objective, LossWeights};
use crate::Vec3;

/// Radius scale applied to the silhouette-derived size estimate.
pub const TEMPLATE_SCALE: f64 = 0.7;
/// Template radius when no view carries a silhouette.
pub const FALLBACK_RADIUS: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub iterations: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub views_per_iter: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub render: SoftRenderConfig,
    pub template_subdiv: u32,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 5e-3,
            betas: (0.9, 0.99),
            eps: 1e-8,
            views_per_iter: 2,
            seed: 0,
            weights: LossWeights::default(),
            render: SoftRenderConfig::default(),
            template_subdiv: 3,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return invalid(format!("moment decays must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.eps > 0.0) {
            return invalid("eps must be positive");
        }
        if self.views_per_iter == 0 {
            return invalid("views_per_iter must be at least 1");
        }
        if !(self.render.sigma > 0.0) {
            return invalid("render sigma must be positive");
        }
        self.weights.validate()
    }
}

/// First and second moment estimates of the Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return invalid(format!(
            "shape mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    let (b1, b2) = betas;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub iou: f64,
    pub lap: f64,
    pub smooth: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub mesh: TriangleMesh,
    pub trace: Vec<TraceRow>,
}

fn silhouette_centroid(mask: &SilhouetteMask) -> Option<(f64, f64, f64)> {
    let (mut sx, mut sy, mut mass) = (0.0, 0.0, 0.0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let m = mask.at(x, y);
            sx += m * (x as f64 + 0.5);
            sy += m * (y as f64 + 0.5);
            mass += m;
        }
    }
    (mass > 0.0).then(|| (sx / mass, sy / mass, mass))
}

/// Icosphere placed at the least-squares intersection of the rays through
/// the silhouette centroids, sized from the silhouette areas.
pub fn initial_template(
    views: &[(SilhouetteMask, CameraPose)],
    k: &Intrinsics,
    subdiv: u32,
) -> Result<TriangleMesh> {
    let stats: Vec<_> = views
        .iter()
        .filter_map(|(mask, pose)| silhouette_centroid(mask).map(|c| (c, pose)))
        .collect();
    if stats.is_empty() {
        return make_icosphere(subdiv, FALLBACK_RADIUS);
    }
    let mut a = Matrix3::zeros();
    let mut b = Vec3::zeros();
    for ((u, v, _), pose) in &stats {
        let dir_view = Vec3::new((u - k.cx) / k.focal, (v - k.cy) / k.focal, 1.0);
        let dir = (pose.rotation_matrix().transpose() * dir_view).normalize();
        let proj = Matrix3::identity() - dir * dir.transpose();
        a += proj;
        b += proj * pose.center();
    }
    let centre = a
        .try_inverse()
        .filter(|_| a.determinant().abs() > 1e-9 * stats.len().pow(3) as f64)
        .map(|inv| inv * b)
        .unwrap_or_else(Vec3::zeros);
    let mut radius_sum = 0.0;
    let mut counted = 0usize;
    for ((_, _, mass), pose) in &stats {
        let depth = pose.to_view(&centre).z;
        if depth > 0.0 {
            radius_sum += (mass / std::f64::consts::PI).sqrt() * depth / k.focal;
            counted += 1;
        }
    }
    let radius = if counted > 0 { TEMPLATE_SCALE * radius_sum / counted as f64 } else { FALLBACK_RADIUS };
    Ok(make_icosphere(subdiv, radius)?.translated(centre))
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Deform an icosphere template with Adam so its soft silhouettes match
/// `views`. Returns the final mesh and the objective before every step.
pub fn reconstruct(
    views: &[(SilhouetteMask, CameraPose)],
    k: &Intrinsics,
    cfg: &OptimConfig,
) -> Result<Reconstruction> {
    if views.len() < 2 {
        return invalid(format!("reconstruction needs at least 2 views, got {}", views.len()));
    }
    cfg.validate()?;
    for (mask, _) in views {
        if mask.width != k.width || mask.height != k.height {
            return invalid(format!(
                "mask is {}x{} but intrinsics are {}x{}",
                mask.width, mask.height, k.width, k.height
            ));
        }
    }
    let mut mesh = initial_template(views, k, cfg.template_subdiv)?;
    let mut params = flatten(mesh.vertices());
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_iter = cfg.views_per_iter.min(views.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let picked = rand::seq::index::sample(&mut rng, views.len(), per_iter);
        let batch: Vec<(&SilhouetteMask, &CameraPose)> =
            picked.iter().map(|i| (&views[i].0, &views[i].1)).collect();
        let out = mesh_objective(&mesh, &batch, k, &cfg.render, &cfg.weights)?;
        if !out.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at iteration {iter}")));
        }
        trace.push(TraceRow { iter, total: out.total, iou: out.iou, lap: out.lap, smooth: out.smooth });
        adam_step(&mut params, &flatten(&out.grad), &mut state, cfg.lr, cfg.betas, cfg.eps)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("non-finite vertex after iteration {iter}")));
        }
        for (v, c) in mesh.vertices_mut().iter_mut().zip(params.chunks_exact(3)) {
            *v = Vec3::new(c[0], c[1], c[2]);
        }
    }
    Ok(Reconstruction { mesh, trace })
}

pub fn format_trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,loss_total,loss_iou,loss_lap,loss_smooth\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.total, r.iou, r.lap, r.smooth));
    }
    out
}

pub fn save_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(format_trace_csv(trace).as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseMode {
    Gt,
    /// Keep each camera position but aim it at the world origin.
    TransOnly,
}

pub fn pose_for_reconstruction(mode: PoseMode, poses: &[CameraPose]) -> Result<Vec<CameraPose>> {
    match mode {
        PoseMode::Gt => Ok(poses.to_vec()),
        PoseMode::TransOnly => poses
            .iter()
            .map(|p| {
                let eye = p.center();
                if eye.norm() < 1e-12 {
                    return invalid("camera at the origin cannot be aimed at it");
                }
                look_at(&eye, &Vec3::zeros(), &Vec3::y())
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use crate::render::rasterize_silhouette;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    #[test]
    fn adam_zero_gradient_only_decays_moments() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState { m: vec![0.5, -0.5], v: vec![0.25, 0.25], step: 3 };
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, (0.9, 0.99), 1e-8).unwrap();
        assert!((s.m[0] - 0.45).abs() < 1e-15 && (s.v[1] - 0.2475).abs() < 1e-15);
        // the update is driven by the remaining momentum only
        let mut q = vec![1.0, -2.0];
        let mut z = AdamState::new(2);
        adam_step(&mut q, &[0.0, 0.0], &mut z, 0.1, (0.9, 0.99), 1e-8).unwrap();
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 1e3] {
            let mut p = vec![0.0];
            let mut s = AdamState::new(1);
            adam_step(&mut p, &[g], &mut s, 5e-3, (0.9, 0.99), 1e-8).unwrap();
            let expected = -5e-3 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p[0];
            adam_step(&mut p, &[-0.7], &mut s, 1e-2, (0.9, 0.99), 1e-8).unwrap();
            last = p[0] - before;
        }
        assert!((last - 1e-2).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut [0.0, 0.0], &[1.0], &mut s, 0.1, (0.9, 0.99), 1e-8).is_err());
    }

    fn ring_views(mesh: &TriangleMesh, k: &Intrinsics, n: usize, dist: f64) -> Vec<(SilhouetteMask, CameraPose)> {
        (0..n)
            .map(|i| {
                let az = i as f64 * std::f64::consts::TAU / n as f64;
                let el: f64 = if i % 2 == 0 { 0.5 } else { -0.3 };
                let eye = Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin()) * dist;
                let pose = look_at(&eye, &Vec3::zeros(), &Vec3::y()).unwrap();
                (rasterize_silhouette(mesh, &pose, k), pose)
            })
            .collect()
    }

    #[test]
    fn template_is_centred_and_sized_from_silhouettes() {
        let k = Intrinsics::square(96, 96.0).unwrap();
        let offset = Vec3::new(0.1, -0.05, 0.08);
        let target = make_icosphere(3, 0.4).unwrap().translated(offset);
        let views = ring_views(&target, &k, 8, 2.0);
        let t = initial_template(&views, &k, 2).unwrap();
        assert!((t.centroid() - offset).norm() < 0.02, "{:?}", t.centroid());
        let r = (t.vertices()[0] - t.centroid()).norm();
        assert!((r - 0.7 * 0.4).abs() < 0.03, "{r}");
        let empty: Vec<_> = views.iter().map(|(m, p)| (SilhouetteMask::zeros(m.width, m.height), *p)).collect();
        let fallback = initial_template(&empty, &k, 1).unwrap();
        assert!((fallback.vertices()[0].norm() - FALLBACK_RADIUS).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_argument_checks() {
        let k = Intrinsics::square(16, 16.0).unwrap();
        let views = ring_views(&make_icosphere(1, 0.5).unwrap(), &k, 3, 2.0);
        assert!(reconstruct(&views[..1], &k, &OptimConfig::default()).is_err());
        let bad = OptimConfig { lr: 0.0, ..Default::default() };
        assert!(reconstruct(&views, &k, &bad).is_err());
        let bad = OptimConfig { betas: (1.0, 0.9), ..Default::default() };
        assert!(reconstruct(&views, &k, &bad).is_err());
        let other = Intrinsics::square(20, 20.0).unwrap();
        assert!(reconstruct(&views, &other, &OptimConfig::default()).is_err());
    }

    #[test]
    fn zero_iterations_return_template() {
        let k = Intrinsics::square(32, 32.0).unwrap();
        let views = ring_views(&make_icosphere(2, 0.5).unwrap(), &k, 4, 2.0);
        let cfg = OptimConfig { iterations: 0, ..Default::default() };
        let out = reconstruct(&views, &k, &cfg).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.mesh, initial_template(&views, &k, 3).unwrap());
    }

    #[test]
    fn reconstruction_is_deterministic_and_improves() {
        let k = Intrinsics::square(40, 40.0).unwrap();
        let views = ring_views(&make_icosphere(3, 0.5).unwrap(), &k, 6, 2.0);
        let cfg = OptimConfig { iterations: 40, template_subdiv: 2, seed: 9, ..Default::default() };
        let a = reconstruct(&views, &k, &cfg).unwrap();
        let b = reconstruct(&views, &k, &cfg).unwrap();
        assert_eq!(a.mesh, b.mesh);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.iter().all(|r| r.total.is_finite()));
        assert!(a.trace.last().unwrap().total < a.trace[0].total);
    }

    fn hard_loss(mesh: &TriangleMesh, views: &[(SilhouetteMask, CameraPose)], k: &Intrinsics) -> f64 {
        views
            .iter()
            .map(|(m, p)| crate::losses::loss_iou(m, &rasterize_silhouette(mesh, p, k)).unwrap().0)
            .sum::<f64>()
            / views.len() as f64
    }

    #[test]
    fn sphere_target_is_recovered() {
        let k = Intrinsics::square(64, 64.0).unwrap();
        let views = ring_views(&make_icosphere(4, 0.5).unwrap(), &k, 24, 2.0);
        let out = reconstruct(&views, &k, &OptimConfig::default()).unwrap();
        let l = hard_loss(&out.mesh, &views, &k);
        assert!(l <= 0.05, "final loss {l}");
    }

    #[test]
    fn empty_targets_shrink_the_mesh() {
        let k = Intrinsics::square(32, 32.0).unwrap();
        let views: Vec<_> = ring_views(&make_icosphere(2, 0.5).unwrap(), &k, 4, 2.0)
            .into_iter()
            .map(|(m, p)| (SilhouetteMask::zeros(m.width, m.height), p))
            .collect();
        let mut mesh_masses = Vec::new();
        let mut cfg = OptimConfig { iterations: 0, template_subdiv: 2, ..Default::default() };
        for window in 0..4 {
            cfg.iterations = window * 100;
            let out = reconstruct(&views, &k, &cfg).unwrap();
            mesh_masses.push(views.iter().map(|(_, p)| rasterize_silhouette(&out.mesh, p, &k).mass()).sum::<f64>());
        }
        assert!(mesh_masses.windows(2).all(|w| w[1] < w[0]), "{mesh_masses:?}");
    }

    #[test]
    fn trace_csv_layout() {
        let rows = [TraceRow { iter: 0, total: 1.5, iou: 0.5, lap: 1.0, smooth: 0.0 }];
        assert_eq!(format_trace_csv(&rows), "iter,loss_total,loss_iou,loss_lap,loss_smooth\n0,1.5,0.5,1,0\n");
    }

    #[test]
    fn pose_modes() {
        let aimed = look_at(&Vec3::new(1.0, 0.8, 1.2), &Vec3::zeros(), &Vec3::y()).unwrap();
        assert_eq!(pose_for_reconstruction(PoseMode::Gt, &[aimed]).unwrap(), vec![aimed]);
        let same = pose_for_reconstruction(PoseMode::TransOnly, &[aimed]).unwrap()[0];
        assert!(same.rotation.angle_to(&aimed.rotation) < 1e-6);
        let origin = CameraPose::identity();
        assert!(pose_for_reconstruction(PoseMode::TransOnly, &[origin]).is_err());
    }

    proptest! {
        #[test]
        fn trans_only_looks_at_origin(az in 0.0f64..6.28, el in -1.2f64..1.2, d in 0.5f64..4.0,
                                      tilt in prop::array::uniform3(-0.3f64..0.3)) {
            let eye = Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin()) * d;
            let base = look_at(&eye, &Vec3::zeros(), &Vec3::y()).unwrap();
            let rot = UnitQuaternion::from_euler_angles(tilt[0], tilt[1], tilt[2]) * base.rotation;
            let perturbed = CameraPose::from_unit(-(rot * eye), rot);
            let fixed = pose_for_reconstruction(PoseMode::TransOnly, &[perturbed]).unwrap()[0];
            prop_assert!((fixed.center() - eye).norm() < 1e-9);
            let k = Intrinsics::default();
            let p = project(&fixed, &k, &Vec3::zeros());
            prop_assert!((p.u - k.cx).abs() < 1e-3 && (p.v - k.cy).abs() < 1e-3);
        }
    }
}
