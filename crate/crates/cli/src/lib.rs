//! Command-line front end for the `evrecon` pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod report;
pub mod scene;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use evrecon_core::meshopt::PoseMode;
use evrecon_core::silext::SilhouetteSource;

pub use config::Config;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "evrecon", version, about = "Mesh reconstruction from simulated event-camera orbits")]
pub struct Cli {
    /// Pipeline configuration (TOML). Scene commands default to the scene's snapshot.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Oracle,
    Extracted,
}

impl From<SourceArg> for SilhouetteSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Oracle => SilhouetteSource::Oracle,
            SourceArg::Extracted => SilhouetteSource::Extracted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoseArg {
    Gt,
    TransOnly,
}

impl From<PoseArg> for PoseMode {
    fn from(p: PoseArg) -> Self {
        match p {
            PoseArg::Gt => PoseMode::Gt,
            PoseArg::TransOnly => PoseMode::TransOnly,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render, simulate events and bin them into a new scene directory.
    Dataset {
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-simulate events.bin from the scene's intensity frames.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Re-bin events.bin into event frames.
    Bin {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Extract silhouettes from the event frames into extracted/.
    Extract {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Deform a template sphere to match the scene silhouettes.
    Reconstruct {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "oracle")]
        source: SourceArg,
        #[arg(long, value_enum, default_value = "gt")]
        poses: PoseArg,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Visual hull by voxel carving.
    Carve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "oracle")]
        source: SourceArg,
        #[arg(long)]
        res: Option<usize>,
        /// Also write the raw occupancy bits (plus a `.txt` sidecar).
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a mesh against the scene ground truth.
    Evaluate {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli, scene: Option<&Path>) -> Result<Config, CliError> {
    let mut cfg = match (&cli.config, scene) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(dir)) => scene::SceneDir::open(dir)?.config()?,
        (None, None) => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs one command and returns the lines to print on success.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    match cli.threads {
        Some(0) => Err(CliError::BadArgs("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::BadArgs(e.to_string()))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<Vec<String>, CliError> {
    use commands as c;
    match &cli.command {
        Command::Dataset { out } => {
            let cfg = resolve_config(cli, None)?;
            let s = c::dataset(&cfg, out)?;
            Ok(vec![
                format!("wrote {}", out.display()),
                format!("frames {} events {} event_frames {}", s.n_frames, s.n_events, s.n_event_frames),
            ])
        }
        Command::Simulate { scene } => {
            let cfg = resolve_config(cli, Some(scene))?;
            let n = c::simulate(&scene::SceneDir::open(scene)?, &cfg)?;
            Ok(vec![format!("events {n}")])
        }
        Command::Bin { scene } => {
            let cfg = resolve_config(cli, Some(scene))?;
            let n = c::bin(&scene::SceneDir::open(scene)?, &cfg)?;
            Ok(vec![format!("event_frames {n}")])
        }
        Command::Extract { scene } => {
            let cfg = resolve_config(cli, Some(scene))?;
            let n = c::extract(&scene::SceneDir::open(scene)?, &cfg)?;
            Ok(vec![format!("masks {n}")])
        }
        Command::Reconstruct { scene, source, poses, iterations, out } => {
            let mut cfg = resolve_config(cli, Some(scene))?;
            if let Some(n) = iterations {
                cfg.optim.iterations = *n;
            }
            let opts = c::ReconstructOptions { source: (*source).into(), pose_mode: (*poses).into() };
            let report = c::reconstruct(&scene::SceneDir::open(scene)?, &cfg, opts, out)?;
            let mut lines = vec![format!("wrote {}", out.display())];
            lines.extend(report.to_text().lines().map(str::to_string));
            Ok(lines)
        }
        Command::Carve { scene, source, res, dump, out } => {
            let mut cfg = resolve_config(cli, Some(scene))?;
            if let Some(r) = res {
                cfg.carve.resolution = *r;
            }
            let hull = c::carve(&scene::SceneDir::open(scene)?, &cfg, (*source).into(), out, dump.as_deref())?;
            Ok(vec![format!("wrote {}", out.display()), format!("occupied_voxels {}", hull.grid.occupied_count())])
        }
        Command::Evaluate { mesh, scene, out } => {
            let cfg = resolve_config(cli, Some(scene))?;
            let report = c::evaluate(&scene::SceneDir::open(scene)?, &cfg, mesh, out)?;
            let mut lines = vec![format!("wrote {}", out.display())];
            lines.extend(report.to_text().lines().map(str::to_string));
            Ok(lines)
        }
    }
}
