//! Contrast-threshold event simulation from intensity video.
//!
//! Each pixel keeps a reference log-intensity level. Log intensity is
//! interpolated linearly between consecutive frames and an event fires
//! every time the signal moves one (jittered) contrast threshold away from
//! the reference; the reference then advances by that threshold.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::IntensityFrame;

/// Smallest contrast threshold a jittered sample may take.
pub const MIN_CONTRAST_THRESHOLD: f64 = 0.01;

/// Slack on threshold comparisons so that a ramp of exactly `k * CT` still
/// yields `k` events despite rounding in `log`.
const CROSSING_TOLERANCE: f64 = 1e-9;

/// A single event `(x, y, t, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t_us: i64,
    /// +1 for brightening, -1 for darkening.
    pub polarity: i8,
}

/// Time-ordered events of one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        if width > usize::from(u16::MAX) || height > usize::from(u16::MAX) {
            return invalid("sensor dimensions must fit in 16 bits");
        }
        for (i, e) in events.iter().enumerate() {
            if usize::from(e.x) >= width || usize::from(e.y) >= height {
                return invalid(format!("event {i} lies outside the sensor"));
            }
            if e.polarity != 1 && e.polarity != -1 {
                return invalid(format!("event {i} has polarity {}", e.polarity));
            }
        }
        if events.windows(2).any(|w| w[1].t_us < w[0].t_us) {
            return invalid("event timestamps must be non-decreasing");
        }
        Ok(Self { width, height, events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Parameters of the event model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Nominal contrast threshold in log-intensity units.
    pub contrast_threshold: f64,
    /// Threshold jitter std for positive and negative events.
    pub threshold_sigma: [f64; 2],
    /// Std of Gaussian noise added to each frame's log intensity.
    pub noise_sigma: f64,
    /// Floor added before taking the log.
    pub log_eps: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.2,
            threshold_sigma: [0.03, 0.03],
            noise_sigma: 0.1,
            log_eps: 1e-3,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Noise-free configuration with a fixed threshold.
    pub fn ideal(contrast_threshold: f64) -> Self {
        Self { contrast_threshold, threshold_sigma: [0.0, 0.0], noise_sigma: 0.0, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite()) {
            return invalid("contrast threshold must be positive");
        }
        if self.threshold_sigma.iter().chain([&self.noise_sigma]).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return invalid("noise and jitter std must be non-negative");
        }
        if !(self.log_eps > 0.0) {
            return invalid("log floor must be positive");
        }
        Ok(())
    }
}

struct ThresholdSampler {
    pos: Normal<f64>,
    neg: Normal<f64>,
}

impl ThresholdSampler {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let mk = |s: f64| {
            Normal::new(cfg.contrast_threshold, s).map_err(|e| Error::InvalidArgument(e.to_string()))
        };
        Ok(Self { pos: mk(cfg.threshold_sigma[0])?, neg: mk(cfg.threshold_sigma[1])? })
    }

    fn sample(&self, rng: &mut ChaCha8Rng, positive: bool) -> f64 {
        let d = if positive { &self.pos } else { &self.neg };
        d.sample(rng).max(MIN_CONTRAST_THRESHOLD)
    }
}

/// Converts an intensity video into an event stream.
pub fn simulate_events(frames: &[IntensityFrame], cfg: &SimConfig) -> Result<EventStream> {
    cfg.validate()?;
    if frames.len() < 2 {
        return invalid("event simulation needs at least 2 frames");
    }
    let (width, height) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| f.width != width || f.height != height) {
        return invalid("all frames must share the same dimensions");
    }
    if frames.windows(2).any(|w| w[1].timestamp_us <= w[0].timestamp_us) {
        return invalid("frame timestamps must be strictly increasing");
    }
    if width > usize::from(u16::MAX) || height > usize::from(u16::MAX) {
        return invalid("sensor dimensions must fit in 16 bits");
    }
    let sampler = ThresholdSampler::new(cfg)?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    // Each row draws from its own stream so the output does not depend on
    // how rows are scheduled across threads.
    let rows: Vec<Vec<Event>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(y as u64);
            let mut out = Vec::new();
            for x in 0..width {
                let idx = y * width + x;
                let log_at = |frame: &IntensityFrame, rng: &mut ChaCha8Rng| {
                    let mut l = (frame.data[idx] + cfg.log_eps).ln();
                    if cfg.noise_sigma > 0.0 {
                        l += noise.sample(rng);
                    }
                    l
                };
                let mut prev = log_at(&frames[0], &mut rng);
                let mut reference = prev;
                let mut ct_pos = sampler.sample(&mut rng, true);
                let mut ct_neg = sampler.sample(&mut rng, false);
                for pair in frames.windows(2) {
                    let cur = log_at(&pair[1], &mut rng);
                    let t0 = pair[0].timestamp_us;
                    let dt = (pair[1].timestamp_us - t0) as f64;
                    let delta = cur - prev;
                    let stamp = |level: f64| {
                        let tau = if delta != 0.0 { ((level - prev) / delta).clamp(0.0, 1.0) } else { 0.0 };
                        t0 + (tau * dt).round() as i64
                    };
                    while cur >= reference + ct_pos - CROSSING_TOLERANCE {
                        reference += ct_pos;
                        out.push(Event { x: x as u16, y: y as u16, t_us: stamp(reference), polarity: 1 });
                        ct_pos = sampler.sample(&mut rng, true);
                    }
                    while cur <= reference - ct_neg + CROSSING_TOLERANCE {
                        reference -= ct_neg;
                        out.push(Event { x: x as u16, y: y as u16, t_us: stamp(reference), polarity: -1 });
                        ct_neg = sampler.sample(&mut rng, false);
                    }
                    prev = cur;
                }
            }
            out
        })
        .collect();
    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    events.sort_unstable_by_key(|e| (e.t_us, e.y, e.x, e.polarity));
    Ok(EventStream { width, height, events })
}

const MAGIC: &[u8; 4] = b"EVT1";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 14;

/// Little-endian binary encoding: 16-byte header then 14-byte records.
pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(stream.width as u16).to_le_bytes());
    out.extend_from_slice(&(stream.height as u16).to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t_us.to_le_bytes());
        out.push(e.polarity as u8);
        out.push(0);
    }
    out
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("event file shorter than its header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("event file magic mismatch".into()));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let height = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    let body = &bytes[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 || (body.len() / RECORD_LEN) as u64 != count {
        return Err(Error::Format(format!(
            "event file declares {count} records but carries {} bytes",
            body.len()
        )));
    }
    let events = body
        .chunks_exact(RECORD_LEN)
        .map(|r| Event {
            x: u16::from_le_bytes([r[0], r[1]]),
            y: u16::from_le_bytes([r[2], r[3]]),
            t_us: i64::from_le_bytes(r[4..12].try_into().expect("8-byte slice")),
            polarity: r[12] as i8,
        })
        .collect();
    EventStream::new(width, height, events).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_events(stream))?;
    Ok(())
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    decode_events(&fs::read(path)?)
}
