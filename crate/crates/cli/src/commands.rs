//! Pipeline stages behind each subcommand.

use std::fs;
use std::path::Path;

use evrecon_core::camera::generate_trajectory;
use evrecon_core::eventframes::{assign_poses, bin_events, count_for_views, denoise_frame, frame_to_image};
use evrecon_core::eventsim::{encode_events, simulate_events};
use evrecon_core::geometry::{format_obj, load_obj, make_blob, make_cube, make_icosphere};
use evrecon_core::hull::{carve as carve_hull, grid_to_mesh};
use evrecon_core::meshopt::{format_trace_csv, pose_for_reconstruction, reconstruct as optimize, PoseMode};
use evrecon_core::metrics::{mean_iou, median_over_set, mesh_chamfer, mesh_reprojection_iou, pose_errors};
use evrecon_core::render::{random_albedo, render_sequence, Scene};
use evrecon_core::silext::{silhouette_source, SceneArtifacts, SilhouetteSource};
use evrecon_core::{
    CameraPose, EventFrame, EventStream, IntensityFrame, SilhouetteMask, Trajectory, TriangleMesh, Vec3, VoxelGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{derive_seed, Config, Stream};
use crate::error::CliError;
use crate::fsutil::{check_output, require, write_atomic, PendingFiles, StagedDir};
use crate::report::Report;
use crate::scene::{self, format_bins, write_manifest, BinRecord, SceneDir};

/// Builds the configured object centred at the origin.
pub fn build_object(cfg: &Config) -> Result<TriangleMesh, CliError> {
    let s = &cfg.scene;
    let mesh = match s.mesh.as_str() {
        "sphere" => make_icosphere(s.subdivisions, s.size)?,
        "cube" => make_cube(s.size)?,
        "blob" => make_blob(s.subdivisions, s.size, s.shape_seed)?,
        path => {
            // external meshes are centred and scaled to a bounding radius of `size`
            let mesh = load_obj(require(Path::new(path))?)?;
            let (lo, hi) = mesh
                .bounding_box()
                .ok_or_else(|| CliError::BadArgs(format!("mesh {path} has no vertices")))?;
            let centre = (lo + hi) / 2.0;
            let radius = mesh.vertices().iter().map(|v| (v - centre).norm()).fold(0.0, f64::max);
            if !(radius > 0.0) {
                return Err(CliError::BadArgs(format!("mesh {path} is degenerate")));
            }
            mesh.translated(-centre).scaled(s.size / radius)
        }
    };
    Ok(mesh)
}

/// Random off-centre translation of the object.
pub fn object_offset(cfg: &Config) -> Vec3 {
    if cfg.scene.offset_sigma == 0.0 {
        return Vec3::zeros();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Offset));
    let normal = Normal::new(0.0, cfg.scene.offset_sigma).expect("validated std");
    Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng))
}

fn background(cfg: &Config) -> Result<IntensityFrame, CliError> {
    let r = &cfg.render;
    let (w, h) = (cfg.camera.width, cfg.camera.height);
    Ok(match r.background.as_str() {
        "uniform" => IntensityFrame::filled(w, h, r.background_level, 0),
        "checkerboard" => IntensityFrame::checkerboard(w, h, r.checker_cell.max(1), r.background_level, 0.5),
        path => IntensityFrame::load_pgm(require(Path::new(path))?, 0)?,
    })
}

/// Frames exactly as they read back from 16-bit PGM.
fn quantized(frame: &IntensityFrame) -> IntensityFrame {
    let mut out = frame.clone();
    out.data.iter_mut().for_each(|v| *v = (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0);
    out
}

fn bin_stream(cfg: &Config, stream: &EventStream, trajectory: &Trajectory) -> Result<(Vec<EventFrame>, Vec<BinRecord>), CliError> {
    if stream.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let count = match cfg.frames.count {
        0 => count_for_views(stream.len(), trajectory.len()),
        c => c,
    };
    let mut frames = bin_events(stream, count)?;
    if cfg.frames.denoise_min_count > 0 {
        frames = frames.iter().map(|f| denoise_frame(f, cfg.frames.denoise_min_count)).collect();
    }
    let poses = assign_poses(&frames, trajectory)?;
    let bins = frames
        .iter()
        .zip(poses)
        .map(|(f, pose_index)| BinRecord { t_start_us: f.t_start_us, t_end_us: f.t_end_us, pose_index })
        .collect();
    Ok((frames, bins))
}

fn write_event_frames(dir: &Path, frames: &[EventFrame]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        frame_to_image(f).save_ppm(dir.join(scene::event_frame_name(i)))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub n_frames: usize,
    pub n_events: usize,
    pub n_event_frames: usize,
    pub offset: Vec3,
}

/// Renders, simulates and bins a full scene into `out`.
pub fn dataset(cfg: &Config, out: &Path) -> Result<DatasetSummary, CliError> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let offset = object_offset(cfg);
    let object = build_object(cfg)?.translated(offset);
    let trajectory = generate_trajectory(&cfg.orbit(Vec3::zeros()), derive_seed(cfg.seed, Stream::Trajectory))?;
    let shading = Scene {
        albedo: random_albedo(object.faces().len(), derive_seed(cfg.seed, Stream::Albedo)),
        background: background(cfg)?,
        light_dir: Vec3::from(cfg.render.light_dir),
    };
    let views = render_sequence(&object, &trajectory, &k, &shading)?;
    let frames: Vec<IntensityFrame> = views.iter().map(|v| quantized(&v.frame)).collect();
    let stream = simulate_events(&frames, &cfg.sim_config())?;
    let (event_frames, bins) = bin_stream(cfg, &stream, &trajectory)?;

    let staged = StagedDir::new(out)?;
    let root = staged.path();
    fs::write(root.join(scene::CONFIG), cfg.to_toml())?;
    trajectory.save(root.join(scene::TRAJECTORY))?;
    fs::write(root.join(scene::GT_MESH), format_obj(&object))?;
    fs::create_dir(root.join(scene::FRAMES))?;
    fs::create_dir(root.join(scene::MASKS))?;
    for (i, (view, frame)) in views.iter().zip(&frames).enumerate() {
        frame.save_pgm(root.join(scene::FRAMES).join(scene::frame_name(i)))?;
        view.mask.save_pgm(root.join(scene::MASKS).join(scene::mask_name(i)))?;
    }
    fs::write(root.join(scene::EVENTS), encode_events(&stream))?;
    write_event_frames(&root.join(scene::EVENT_FRAMES), &event_frames)?;
    fs::write(root.join(scene::BINS), format_bins(&bins))?;
    write_manifest(root, cfg)?;
    staged.commit()?;
    Ok(DatasetSummary { n_frames: views.len(), n_events: stream.len(), n_event_frames: event_frames.len(), offset })
}

fn store_config(scene: &SceneDir, cfg: &Config) -> Result<(), CliError> {
    let path = scene.path(scene::CONFIG);
    let text = cfg.to_toml();
    if fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
        write_atomic(&path, text.as_bytes())?;
    }
    Ok(())
}

/// Regenerates `events.bin` from the stored intensity frames.
pub fn simulate(scene: &SceneDir, cfg: &Config) -> Result<usize, CliError> {
    cfg.validate()?;
    let trajectory = scene.trajectory()?;
    let frames = scene.frames(&trajectory)?;
    let stream = simulate_events(&frames, &cfg.sim_config())?;
    write_atomic(&scene.path(scene::EVENTS), &encode_events(&stream))?;
    store_config(scene, cfg)?;
    write_manifest(scene.root(), cfg)?;
    Ok(stream.len())
}

/// Regenerates the event frames and bin table from `events.bin`.
pub fn bin(scene: &SceneDir, cfg: &Config) -> Result<usize, CliError> {
    cfg.validate()?;
    let trajectory = scene.trajectory()?;
    let stream = scene.events()?;
    let (frames, bins) = bin_stream(cfg, &stream, &trajectory)?;
    let staged = StagedDir::new(&scene.path(scene::EVENT_FRAMES))?;
    write_event_frames(staged.path(), &frames)?;
    staged.commit()?;
    write_atomic(&scene.path(scene::BINS), format_bins(&bins).as_bytes())?;
    store_config(scene, cfg)?;
    write_manifest(scene.root(), cfg)?;
    Ok(frames.len())
}

fn extracted_views(scene: &SceneDir, cfg: &Config, trajectory: &Trajectory) -> Result<(Vec<(SilhouetteMask, CameraPose)>, Vec<BinRecord>), CliError> {
    let bins = scene.bins()?;
    let event_frames = scene.event_frames(&bins)?;
    let frame_poses = bins
        .iter()
        .map(|b| {
            trajectory.poses().get(b.pose_index).copied().ok_or_else(|| {
                CliError::Malformed(format!("bin pairs with pose {} of {}", b.pose_index, trajectory.len()))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let artifacts = SceneArtifacts { event_frames, frame_poses, ..Default::default() };
    let views = silhouette_source(SilhouetteSource::Extracted, &artifacts, &cfg.extract_params())?;
    Ok((views, bins))
}

/// Writes extracted silhouettes, one per event frame, to `extracted/`.
pub fn extract(scene: &SceneDir, cfg: &Config) -> Result<usize, CliError> {
    cfg.validate()?;
    let trajectory = scene.trajectory()?;
    let (views, _) = extracted_views(scene, cfg, &trajectory)?;
    let staged = StagedDir::new(&scene.path(scene::EXTRACTED))?;
    for (i, (mask, _)) in views.iter().enumerate() {
        mask.save_pgm(staged.path().join(scene::mask_name(i)))?;
    }
    staged.commit()?;
    store_config(scene, cfg)?;
    write_manifest(scene.root(), cfg)?;
    Ok(views.len())
}

fn oracle_views(scene: &SceneDir, trajectory: &Trajectory) -> Result<Vec<(SilhouetteMask, CameraPose)>, CliError> {
    let masks = scene.masks(trajectory.len())?;
    Ok(masks.into_iter().zip(trajectory.poses().iter().copied()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconstructOptions {
    pub source: SilhouetteSource,
    pub pose_mode: PoseMode,
}

fn add_chamfer(report: &mut Report, scene: &SceneDir, cfg: &Config, mesh: &TriangleMesh) -> Result<(), CliError> {
    match scene.gt_mesh()? {
        None => report.note("ground-truth mesh missing; chamfer omitted"),
        Some(_) if mesh.is_empty() => report.note("predicted mesh is empty; chamfer omitted"),
        Some(gt) => {
            let seed = derive_seed(cfg.seed, Stream::Chamfer);
            report.set("chamfer", mesh_chamfer(mesh, &gt, cfg.evaluate.chamfer_samples, seed)?);
        }
    }
    Ok(())
}

/// Optimizes a mesh against the scene's silhouettes and writes the OBJ,
/// the loss trace (`<out>.trace.csv`) and metrics (`<out>.metrics.json/.txt`).
pub fn reconstruct(scene: &SceneDir, cfg: &Config, opts: ReconstructOptions, out: &Path) -> Result<Report, CliError> {
    cfg.validate()?;
    check_output(out)?;
    let k = cfg.intrinsics()?;
    let trajectory = scene.trajectory()?;
    let oracle = oracle_views(scene, &trajectory)?;
    let mut report = Report::default();
    let mut views = match opts.source {
        SilhouetteSource::Oracle => oracle.clone(),
        SilhouetteSource::Extracted => {
            let (views, bins) = extracted_views(scene, cfg, &trajectory)?;
            if !views.is_empty() {
                let pairs: Vec<_> = views.iter().zip(&bins).map(|((m, _), b)| (&oracle[b.pose_index].0, m)).collect();
                report.set("source_mask_iou_loss", mean_iou(&pairs)?);
            }
            views
        }
    };
    let gt_poses: Vec<CameraPose> = views.iter().map(|(_, p)| *p).collect();
    let used = pose_for_reconstruction(opts.pose_mode, &gt_poses)?;
    if opts.pose_mode == PoseMode::TransOnly {
        let errs: Vec<(f64, f64)> = gt_poses.iter().zip(&used).map(|(g, u)| pose_errors(g, u)).collect();
        report.set("median_t_err", median_over_set(&errs.iter().map(|e| e.0).collect::<Vec<_>>())?);
        report.set("median_rot_err_deg", median_over_set(&errs.iter().map(|e| e.1).collect::<Vec<_>>())?);
    }
    for (view, pose) in views.iter_mut().zip(used) {
        view.1 = pose;
    }
    let optim = cfg.optim_config();
    let result = optimize(&views, &k, &optim)?;
    report.set("n_views", views.len() as f64);
    report.set("iterations", optim.iterations as f64);
    if let (Some(first), Some(last)) = (result.trace.first(), result.trace.last()) {
        report.set("initial_loss_total", first.total);
        report.set("final_loss_total", last.total);
        report.set("final_loss_iou", last.iou);
    }
    report.set("reprojection_iou_loss", mesh_reprojection_iou(&result.mesh, &oracle, &k)?);
    add_chamfer(&mut report, scene, cfg, &result.mesh)?;

    let mut pending = PendingFiles::new();
    pending.add(out, format_obj(&result.mesh).as_bytes())?;
    pending.add(&out.with_extension("trace.csv"), format_trace_csv(&result.trace).as_bytes())?;
    report.stage(&mut pending, &out.with_extension("metrics.json"))?;
    pending.commit()?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct CarveOutput {
    pub grid: VoxelGrid,
    pub mesh: TriangleMesh,
}

/// Visual hull of the scene's silhouettes, surfaced to `out`; with `dump`
/// the raw occupancy bits and their sidecar are written too.
pub fn carve(
    scene: &SceneDir,
    cfg: &Config,
    source: SilhouetteSource,
    out: &Path,
    dump: Option<&Path>,
) -> Result<CarveOutput, CliError> {
    cfg.validate()?;
    check_output(out)?;
    if let Some(d) = dump {
        check_output(d)?;
    }
    let k = cfg.intrinsics()?;
    let trajectory = scene.trajectory()?;
    let views = match source {
        SilhouetteSource::Oracle => oracle_views(scene, &trajectory)?,
        SilhouetteSource::Extracted => extracted_views(scene, cfg, &trajectory)?.0,
    };
    let res = cfg.carve.resolution;
    let h = cfg.carve.half_extent;
    let grid = carve_hull(&views, &k, [res; 3], Vec3::repeat(-h), Vec3::repeat(h))?;
    let mesh = grid_to_mesh(&grid)?;
    let mut pending = PendingFiles::new();
    pending.add(out, format_obj(&mesh).as_bytes())?;
    if let Some(d) = dump {
        pending.add(d, &grid.to_bits())?;
        let mut sidecar = d.as_os_str().to_owned();
        sidecar.push(".txt");
        pending.add(Path::new(&sidecar), grid.sidecar_text().as_bytes())?;
    }
    pending.commit()?;
    Ok(CarveOutput { grid, mesh })
}

/// Scores `mesh_path` against the scene ground truth and writes the report.
pub fn evaluate(scene: &SceneDir, cfg: &Config, mesh_path: &Path, out: &Path) -> Result<Report, CliError> {
    cfg.validate()?;
    check_output(out)?;
    let k = cfg.intrinsics()?;
    let mesh = load_obj(require(mesh_path)?)?;
    let trajectory = scene.trajectory()?;
    let oracle = oracle_views(scene, &trajectory)?;
    let mut report = Report::default();
    report.set("reprojection_iou_loss", mesh_reprojection_iou(&mesh, &oracle, &k)?);
    add_chamfer(&mut report, scene, cfg, &mesh)?;
    let mut pending = PendingFiles::new();
    report.stage(&mut pending, out)?;
    pending.commit()?;
    Ok(report)
}
