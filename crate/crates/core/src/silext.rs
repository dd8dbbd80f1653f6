//! Classical silhouette extraction from event frames: close the event
//! contour with a dilation, fill everything not reachable from the image
//! border, erode back and keep the dominant component.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::camera::CameraPose;
use crate::error::{invalid, Result};
use crate::eventframes::EventFrame;
use crate::image::SilhouetteMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractParams {
    /// Radius (px) of the disk used to close gaps in the event contour.
    pub dilate_radius: usize,
    /// Smallest accepted component area (px^2); smaller results yield an empty mask.
    pub min_component: usize,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self { dilate_radius: 3, min_component: 100 }
    }
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn dilate(bits: &[bool], w: usize, h: usize, offsets: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for y in 0..h {
        for x in 0..w {
            if !bits[y * w + x] {
                continue;
            }
            for &(dx, dy) in offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    out
}

/// Out-of-image neighbours are ignored, so shapes touching the border are
/// not eroded from outside the frame.
fn erode(bits: &[bool], w: usize, h: usize, offsets: &[(isize, isize)]) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = bits[y * w + x]
                && offsets.iter().all(|&(dx, dy)| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h || bits[ny as usize * w + nx as usize]
                });
        }
    }
    out
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// Set pixels not 4-connected to the border through unset pixels, plus the
/// set pixels themselves.
fn fill_holes(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut exterior = vec![false; bits.len()];
    let mut queue = VecDeque::new();
    for i in 0..bits.len() {
        let (x, y) = (i % w, i / w);
        if (x == 0 || y == 0 || x + 1 == w || y + 1 == h) && !bits[i] {
            exterior[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for n in neighbors4(i, w, h) {
            if !bits[n] && !exterior[n] {
                exterior[n] = true;
                queue.push_back(n);
            }
        }
    }
    exterior.iter().map(|e| !e).collect()
}

/// Largest 4-connected component (lowest starting index wins ties).
fn largest_component(bits: &[bool], w: usize, h: usize) -> Vec<usize> {
    let mut seen = vec![false; bits.len()];
    let mut best = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut component = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < component.len() {
            let i = component[head];
            head += 1;
            for n in neighbors4(i, w, h) {
                if bits[n] && !seen[n] {
                    seen[n] = true;
                    component.push(n);
                }
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }
    best
}

/// Closes and fills the event support of `frame` into a binary mask.
pub fn extract_silhouette(frame: &EventFrame, params: &ExtractParams) -> SilhouetteMask {
    let (w, h) = (frame.width, frame.height);
    let support: Vec<bool> = (0..w * h).map(|i| frame.combined(i) >= 1).collect();
    let offsets = disk_offsets(params.dilate_radius);
    let closed = dilate(&support, w, h, &offsets);
    let filled = fill_holes(&closed, w, h);
    let shrunk = erode(&filled, w, h, &offsets);
    let component = largest_component(&shrunk, w, h);
    let mut mask = SilhouetteMask::zeros(w, h);
    if !component.is_empty() && component.len() >= params.min_component {
        for i in component {
            mask.data[i] = 1.0;
        }
    }
    mask
}

/// Where reconstruction silhouettes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SilhouetteSource {
    /// Ground-truth masks from the hard rasterizer.
    Oracle,
    /// Masks extracted from event frames.
    Extracted,
}

/// Inputs [`silhouette_source`] can draw from.
#[derive(Debug, Clone, Default)]
pub struct SceneArtifacts {
    pub gt_masks: Vec<SilhouetteMask>,
    pub gt_poses: Vec<CameraPose>,
    pub event_frames: Vec<EventFrame>,
    /// Pose paired with each event frame.
    pub frame_poses: Vec<CameraPose>,
}

pub fn silhouette_source(
    kind: SilhouetteSource,
    scene: &SceneArtifacts,
    params: &ExtractParams,
) -> Result<Vec<(SilhouetteMask, CameraPose)>> {
    match kind {
        SilhouetteSource::Oracle => {
            if scene.gt_masks.len() != scene.gt_poses.len() {
                return invalid(format!(
                    "{} ground-truth masks but {} poses",
                    scene.gt_masks.len(),
                    scene.gt_poses.len()
                ));
            }
            Ok(scene.gt_masks.iter().cloned().zip(scene.gt_poses.iter().copied()).collect())
        }
        SilhouetteSource::Extracted => {
            if scene.event_frames.len() != scene.frame_poses.len() {
                return invalid(format!(
                    "{} event frames but {} paired poses",
                    scene.event_frames.len(),
                    scene.frame_poses.len()
                ));
            }
            Ok(scene
                .event_frames
                .par_iter()
                .zip(scene.frame_poses.par_iter())
                .map(|(f, p)| (extract_silhouette(f, params), *p))
                .collect())
        }
    }
}
