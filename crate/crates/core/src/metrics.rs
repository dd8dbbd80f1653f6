//! Evaluation metrics: silhouette IoU, chamfer distance and pose errors.

use rayon::prelude::*;

use crate::camera::{CameraPose, Intrinsics};
use crate::error::{invalid, Result};
use crate::geometry::{sample_surface, PointCloud, TriangleMesh};
use crate::image::SilhouetteMask;
use crate::losses::loss_iou;
use crate::render::rasterize_silhouette;

/// Points sampled per mesh for surface chamfer distance.
pub const CHAMFER_SAMPLES: usize = 10_000;

/// Mean negative IoU over `(ground truth, prediction)` pairs.
pub fn mean_iou(pairs: &[(&SilhouetteMask, &SilhouetteMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return invalid("mean_iou needs at least one pair");
    }
    let mut sum = 0.0;
    for (gt, pred) in pairs {
        sum += loss_iou(gt, pred)?.0;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean negative IoU between hard renders of `mesh` and the given masks.
pub fn mesh_reprojection_iou(
    mesh: &TriangleMesh,
    views: &[(SilhouetteMask, CameraPose)],
    k: &Intrinsics,
) -> Result<f64> {
    if views.is_empty() {
        return invalid("reprojection needs at least one view");
    }
    let renders: Vec<SilhouetteMask> = views.par_iter().map(|(_, p)| rasterize_silhouette(mesh, p, k)).collect();
    let pairs: Vec<_> = views.iter().zip(&renders).map(|((gt, _), r)| (gt, r)).collect();
    mean_iou(&pairs)
}

fn mean_nearest(from: &PointCloud, to: &PointCloud, squared: bool) -> f64 {
    let nearest: Vec<f64> = from
        .points
        .par_iter()
        .map(|p| {
            let d2 = to.points.iter().fold(f64::INFINITY, |m, q| m.min((p - q).norm_squared()));
            if squared {
                d2
            } else {
                d2.sqrt()
            }
        })
        .collect();
    nearest.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric chamfer distance `½ (mean_a min_b d + mean_b min_a d)` with
/// Euclidean distances, or squared ones when `squared` is set.
pub fn chamfer_with(a: &PointCloud, b: &PointCloud, squared: bool) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("chamfer distance needs non-empty clouds");
    }
    Ok(0.5 * (mean_nearest(a, b, squared) + mean_nearest(b, a, squared)))
}

pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_with(a, b, false)
}

/// Chamfer distance between area-uniform surface samples of two meshes.
/// Both meshes are sampled with the same seed, so identical meshes score 0.
pub fn mesh_chamfer(a: &TriangleMesh, b: &TriangleMesh, samples: usize, seed: u64) -> Result<f64> {
    let pa = sample_surface(a, samples, seed)?;
    let pb = sample_surface(b, samples, seed)?;
    chamfer(&pa, &pb)
}

/// Translation distance in metres and minimal rotation angle in degrees.
pub fn pose_errors(p: &CameraPose, p_hat: &CameraPose) -> (f64, f64) {
    let t_err = (p.translation - p_hat.translation).norm();
    let dot = p.rotation.into_inner().dot(&p_hat.rotation.into_inner()).abs().min(1.0);
    (t_err, 2.0 * dot.acos().to_degrees())
}

/// Median, taking the lower of the two middle values for even counts.
pub fn median_over_set(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return invalid("median of an empty set");
    }
    if values.iter().any(|v| v.is_nan()) {
        return invalid("median of a set containing NaN");
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// Fraction of `(t_err, rot_err)` pairs within both thresholds.
pub fn threshold_accuracy(errors: &[(f64, f64)], max_t: f64, max_rot_deg: f64) -> Result<f64> {
    if errors.is_empty() {
        return invalid("accuracy of an empty set");
    }
    let hits = errors.iter().filter(|(t, r)| *t < max_t && *r < max_rot_deg).count();
    Ok(hits as f64 / errors.len() as f64)
}
