//! On-disk layout of a scene directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use evrecon_core::eventframes::image_to_frame;
use evrecon_core::eventsim::read_events;
use evrecon_core::geometry::load_obj;
use evrecon_core::image::RgbImage;
use evrecon_core::{EventFrame, EventStream, IntensityFrame, SilhouetteMask, Trajectory, TriangleMesh};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::CliError;
use crate::fsutil::{list_files, require, sha256_hex, write_atomic};

pub const CONFIG: &str = "config.toml";
pub const TRAJECTORY: &str = "trajectory.txt";
pub const GT_MESH: &str = "gt_mesh.obj";
pub const FRAMES: &str = "frames";
pub const MASKS: &str = "masks";
pub const EVENTS: &str = "events.bin";
pub const EVENT_FRAMES: &str = "event_frames";
pub const BINS: &str = "bins.txt";
pub const EXTRACTED: &str = "extracted";
pub const MANIFEST: &str = "manifest.json";

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.pgm")
}

pub fn mask_name(i: usize) -> String {
    format!("mask_{i:04}.pgm")
}

pub fn event_frame_name(i: usize) -> String {
    format!("ef_{i:04}.ppm")
}

/// One event-frame bin: time window and the index of its paired pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinRecord {
    pub t_start_us: i64,
    pub t_end_us: i64,
    pub pose_index: usize,
}

pub fn format_bins(bins: &[BinRecord]) -> String {
    let mut out = String::from("# index t_start_us t_end_us pose_index\n");
    for (i, b) in bins.iter().enumerate() {
        writeln!(out, "{i} {} {} {}", b.t_start_us, b.t_end_us, b.pose_index).unwrap();
    }
    out
}

pub fn parse_bins(text: &str) -> Result<Vec<BinRecord>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || CliError::Malformed(format!("{BINS} line {}: expected 4 integers", n + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        let index: usize = fields[0].parse().map_err(|_| bad())?;
        if index != out.len() {
            return Err(CliError::Malformed(format!("{BINS} line {}: bins out of order", n + 1)));
        }
        out.push(BinRecord {
            t_start_us: fields[1].parse().map_err(|_| bad())?,
            t_end_us: fields[2].parse().map_err(|_| bad())?,
            pose_index: fields[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: String,
    pub artifacts: Vec<ManifestEntry>,
}

/// Read access to a scene directory.
#[derive(Debug, Clone)]
pub struct SceneDir {
    root: PathBuf,
}

impl SceneDir {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        if !root.is_dir() {
            return Err(CliError::Missing(root.to_path_buf()));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config(&self) -> Result<Config, CliError> {
        Config::load(&self.path(CONFIG))
    }

    pub fn trajectory(&self) -> Result<Trajectory, CliError> {
        Ok(Trajectory::load(require(&self.path(TRAJECTORY))?)?)
    }

    pub fn gt_mesh(&self) -> Result<Option<TriangleMesh>, CliError> {
        let p = self.path(GT_MESH);
        if p.is_file() {
            Ok(Some(load_obj(&p)?))
        } else {
            Ok(None)
        }
    }

    pub fn frames(&self, trajectory: &Trajectory) -> Result<Vec<IntensityFrame>, CliError> {
        let dir = self.path(FRAMES);
        trajectory
            .timestamps_us()
            .iter()
            .enumerate()
            .map(|(i, &t)| Ok(IntensityFrame::load_pgm(require(&dir.join(frame_name(i)))?, t)?))
            .collect()
    }

    pub fn masks(&self, n: usize) -> Result<Vec<SilhouetteMask>, CliError> {
        let dir = self.path(MASKS);
        (0..n).map(|i| Ok(SilhouetteMask::load_pgm(require(&dir.join(mask_name(i)))?)?)).collect()
    }

    pub fn events(&self) -> Result<EventStream, CliError> {
        Ok(read_events(require(&self.path(EVENTS))?)?)
    }

    pub fn bins(&self) -> Result<Vec<BinRecord>, CliError> {
        parse_bins(&std::fs::read_to_string(require(&self.path(BINS))?)?)
    }

    /// Event frames with their bin windows restored from the bin table.
    pub fn event_frames(&self, bins: &[BinRecord]) -> Result<Vec<EventFrame>, CliError> {
        let dir = self.path(EVENT_FRAMES);
        bins.iter()
            .enumerate()
            .map(|(i, b)| {
                let img = RgbImage::load_ppm(require(&dir.join(event_frame_name(i)))?)?;
                let mut f = image_to_frame(&img);
                f.t_start_us = b.t_start_us;
                f.t_end_us = b.t_end_us;
                Ok(f)
            })
            .collect()
    }
}

/// Hashes every file under `root` except the manifest itself.
pub fn build_manifest(root: &Path, cfg: &Config) -> Result<Manifest, CliError> {
    let mut artifacts = Vec::new();
    for rel in list_files(root)? {
        if rel == MANIFEST {
            continue;
        }
        let bytes = std::fs::read(root.join(&rel))?;
        artifacts.push(ManifestEntry { sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, path: rel });
    }
    Ok(Manifest { seed: cfg.seed, config: cfg.to_toml(), artifacts })
}

pub fn write_manifest(root: &Path, cfg: &Config) -> Result<Manifest, CliError> {
    let manifest = build_manifest(root, cfg)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Malformed(e.to_string()))?;
    write_atomic(&root.join(MANIFEST), format!("{text}\n").as_bytes())?;
    Ok(manifest)
}
