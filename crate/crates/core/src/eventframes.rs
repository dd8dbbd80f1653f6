//! Count-based binning of events into per-polarity histogram frames.

use crate::camera::Trajectory;
use crate::error::{invalid, Result};
use crate::eventsim::EventStream;
use crate::image::RgbImage;

/// Two-channel event histogram `H(x, y, p)` over one bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFrame {
    pub width: usize,
    pub height: usize,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
    /// Timestamp of the first event in the bin.
    pub t_start_us: i64,
    /// Timestamp of the last event in the bin.
    pub t_end_us: i64,
}

impl EventFrame {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            positive: vec![0; width * height],
            negative: vec![0; width * height],
            t_start_us: 0,
            t_end_us: 0,
        }
    }

    /// Combined count of both polarities at pixel index `i`.
    #[inline]
    pub fn combined(&self, i: usize) -> u32 {
        self.positive[i] + self.negative[i]
    }

    /// Total number of events accumulated in the frame.
    pub fn mass(&self) -> u64 {
        self.positive.iter().chain(&self.negative).map(|&c| u64::from(c)).sum()
    }

    pub fn midpoint_us(&self) -> f64 {
        (self.t_start_us as f64 + self.t_end_us as f64) / 2.0
    }
}

/// Splits the stream into `floor(N / count)` frames of exactly `count`
/// consecutive events; the remainder is dropped.
pub fn bin_events(stream: &EventStream, count: usize) -> Result<Vec<EventFrame>> {
    if count == 0 {
        return invalid("events per bin must be at least 1");
    }
    let (w, h) = (stream.width, stream.height);
    Ok(stream
        .events
        .chunks_exact(count)
        .map(|chunk| {
            let mut frame = EventFrame::empty(w, h);
            for e in chunk {
                let i = usize::from(e.y) * w + usize::from(e.x);
                if e.polarity > 0 {
                    frame.positive[i] += 1;
                } else {
                    frame.negative[i] += 1;
                }
            }
            frame.t_start_us = chunk[0].t_us;
            frame.t_end_us = chunk[chunk.len() - 1].t_us;
            frame
        })
        .collect())
}

/// Bin size that yields one frame per view.
pub fn count_for_views(n_events: usize, n_views: usize) -> usize {
    (n_events / n_views.max(1)).max(1)
}

/// For each frame, the index of the trajectory pose nearest its bin midpoint.
pub fn assign_poses(frames: &[EventFrame], trajectory: &Trajectory) -> Result<Vec<usize>> {
    if trajectory.is_empty() {
        return invalid("cannot pair event frames with an empty trajectory");
    }
    Ok(frames
        .iter()
        .map(|f| trajectory.nearest(f.midpoint_us()).expect("non-empty trajectory"))
        .collect())
}

/// Three-channel byte image: positive counts, negative counts (both clamped
/// at 255) and an all-zero third channel.
pub fn frame_to_image(frame: &EventFrame) -> RgbImage {
    let mut data = Vec::with_capacity(3 * frame.width * frame.height);
    for (p, n) in frame.positive.iter().zip(&frame.negative) {
        data.extend_from_slice(&[(*p).min(255) as u8, (*n).min(255) as u8, 0]);
    }
    RgbImage { width: frame.width, height: frame.height, data }
}

/// Inverse of [`frame_to_image`] below the clamp; timestamps are not stored
/// in the image and come back as zero.
pub fn image_to_frame(image: &RgbImage) -> EventFrame {
    let mut frame = EventFrame::empty(image.width, image.height);
    for (i, px) in image.data.chunks_exact(3).enumerate() {
        frame.positive[i] = u32::from(px[0]);
        frame.negative[i] = u32::from(px[1]);
    }
    frame
}

/// Zeroes pixels whose combined count is below `min_count`.
pub fn denoise_frame(frame: &EventFrame, min_count: u32) -> EventFrame {
    let mut out = frame.clone();
    for i in 0..out.positive.len() {
        if out.combined(i) < min_count {
            out.positive[i] = 0;
            out.negative[i] = 0;
        }
    }
    out
}
