use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use evrecon_cli::report::Report;
use evrecon_cli::scene::{Manifest, SceneDir};
use evrecon_cli::{run, Cli, CliError};
use evrecon_core::geometry::load_obj;
use evrecon_core::metrics::mesh_chamfer;

fn run_args(args: &[&str]) -> Result<Vec<String>, CliError> {
    let mut full = vec!["evrecon"];
    full.extend_from_slice(args);
    run(&Cli::try_parse_from(full).expect("arguments parse"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const NOISE_FREE_SPHERE: &str = "[scene]\nmesh = \"sphere\"\n[events]\nnoise_sigma = 0.0\nthreshold_sigma = [0.0, 0.0]\n";

#[test]
fn default_sphere_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[scene]\nmesh = \"sphere\"\n");
    let out = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&out)]).unwrap();
    assert_eq!(fs::read_dir(out.join("frames")).unwrap().count(), 45);
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 45);
    assert!(fs::metadata(out.join("events.bin")).unwrap().len() > 16);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 0);
    assert!(manifest.artifacts.iter().any(|a| a.path == "frames/frame_0044.pgm"));
    assert!(manifest.artifacts.iter().any(|a| a.path == "gt_mesh.obj"));
    // no staging leftovers next to the scene
    let siblings: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(siblings.len(), 2);
}

#[test]
fn fixed_seed_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[camera]\nwidth = 64\nheight = 64\nfocal = 64.0\n");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        run_args(&["dataset", "--config", s(&cfg), "--seed", seed, "--out", s(out)]).unwrap();
    }
    let read = |p: &Path| fs::read(p.join("manifest.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn unaugmented_orbit_is_equally_spaced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "[trajectory]\nn_views = 4\naugment = false\n[scene]\noffset_sigma = 0.0\n[camera]\nwidth = 32\nheight = 32\nfocal = 32.0\n",
    );
    let out = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&out)]).unwrap();
    let traj = SceneDir::open(&out).unwrap().trajectory().unwrap();
    assert_eq!(traj.len(), 4);
    let az: Vec<f64> = traj.poses().iter().map(|p| p.center().z.atan2(p.center().x).to_degrees()).collect();
    for w in az.windows(2) {
        let d = (w[1] - w[0]).rem_euclid(360.0);
        assert!((d - 90.0).abs() < 1e-9, "{az:?}");
    }
}

#[test]
fn stage_commands_reproduce_dataset_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[camera]\nwidth = 48\nheight = 48\nfocal = 48.0\n[trajectory]\nn_views = 6\n");
    let out = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&out)]).unwrap();
    let before = fs::read(out.join("manifest.json")).unwrap();
    run_args(&["simulate", "--scene", s(&out)]).unwrap();
    run_args(&["bin", "--scene", s(&out)]).unwrap();
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), before);
    run_args(&["extract", "--scene", s(&out)]).unwrap();
    let n_bins = SceneDir::open(&out).unwrap().bins().unwrap().len();
    assert_eq!(fs::read_dir(out.join("extracted")).unwrap().count(), n_bins);
}

#[test]
fn oracle_reconstruction_of_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "[scene]\nmesh = \"sphere\"\n[camera]\nwidth = 128\nheight = 128\nfocal = 128.0\n",
    );
    let scene = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&scene)]).unwrap();
    let out = dir.path().join("recon.obj");
    run_args(&["reconstruct", "--scene", s(&scene), "--out", s(&out)]).unwrap();
    let report = Report::from_json(&fs::read_to_string(dir.path().join("recon.metrics.json")).unwrap()).unwrap();
    assert!(report.get("reprojection_iou_loss").unwrap() <= 0.05, "{report:?}");
    assert!(report.get("final_loss_total").unwrap() <= report.get("initial_loss_total").unwrap());
    let trace = fs::read_to_string(dir.path().join("recon.trace.csv")).unwrap();
    assert!(trace.starts_with("iter,loss_total,loss_iou,loss_lap,loss_smooth\n"));
    assert_eq!(trace.lines().count(), 2001);
    assert!(load_obj(&out).unwrap().is_closed());
}

#[test]
fn extracted_reconstruction_of_noise_free_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", NOISE_FREE_SPHERE);
    let scene = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&scene)]).unwrap();
    let out = dir.path().join("recon.obj");
    run_args(&["reconstruct", "--scene", s(&scene), "--source", "extracted", "--out", s(&out)]).unwrap();
    let report = Report::from_json(&fs::read_to_string(dir.path().join("recon.metrics.json")).unwrap()).unwrap();
    assert!(report.get("reprojection_iou_loss").unwrap() <= 0.15, "{report:?}");
}

#[test]
fn trans_only_poses_report_pose_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[camera]\nwidth = 48\nheight = 48\nfocal = 48.0\n[trajectory]\nn_views = 6\n");
    let scene = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&scene)]).unwrap();
    let out = dir.path().join("r.obj");
    run_args(&["reconstruct", "--scene", s(&scene), "--poses", "trans-only", "--iterations", "5", "--out", s(&out)]).unwrap();
    let report = Report::from_json(&fs::read_to_string(dir.path().join("r.metrics.json")).unwrap()).unwrap();
    // the orbit already looks at the origin; acos near 1 amplifies round-off
    let rot = report.get("median_rot_err_deg").unwrap();
    assert!(rot < 1e-4, "{rot}");
    assert!(report.get("median_t_err").unwrap() < 1e-9);
}

#[test]
fn unwritable_output_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[camera]\nwidth = 32\nheight = 32\nfocal = 32.0\n[trajectory]\nn_views = 3\n");
    let scene = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&scene)]).unwrap();
    let before = evrecon_cli::fsutil::list_files(dir.path()).unwrap();
    let out = dir.path().join("nowhere").join("r.obj");
    assert!(run_args(&["reconstruct", "--scene", s(&scene), "--iterations", "3", "--out", s(&out)]).is_err());
    assert_eq!(evrecon_cli::fsutil::list_files(dir.path()).unwrap(), before);
}

#[test]
fn carve_sphere_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[scene]\nmesh = \"sphere\"\noffset_sigma = 0.0\n");
    let scene = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&scene)]).unwrap();
    let out = dir.path().join("hull.obj");
    let dump = dir.path().join("hull.bin");
    let lines = run_args(&["carve", "--scene", s(&scene), "--out", s(&out), "--dump", s(&dump)]).unwrap();
    assert!(lines.iter().any(|l| l.starts_with("occupied_voxels ")));
    let hull = load_obj(&out).unwrap();
    let gt = load_obj(scene.join("gt_mesh.obj")).unwrap();
    let diagonal = 2.4 / 64.0 * 3f64.sqrt();
    let d = mesh_chamfer(&hull, &gt, 10_000, 1).unwrap();
    assert!(d <= 2.0 * diagonal, "{d}");
    assert_eq!(fs::metadata(&dump).unwrap().len(), 64 * 64 * 64 / 8);
    assert!(fs::read_to_string(dir.path().join("hull.bin.txt")).unwrap().starts_with("res 64 64 64\n"));

    let coarse = write_config(dir.path(), "coarse.toml", "[scene]\nmesh = \"sphere\"\noffset_sigma = 0.0\n[carve]\nhalf_extent = 0.5\n");
    let out2 = dir.path().join("coarse.obj");
    run_args(&["carve", "--scene", s(&scene), "--config", s(&coarse), "--res", "2", "--out", s(&out2)]).unwrap();
    let box_mesh = load_obj(&out2).unwrap();
    assert!(box_mesh.is_closed() && box_mesh.signed_volume() > 0.0);
}

#[test]
fn evaluate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[scene]\nmesh = \"sphere\"\nsize = 1.0\n[trajectory]\ndistance = 3.0\nn_views = 8\n");
    let scene = dir.path().join("scene");
    run_args(&["dataset", "--config", s(&cfg), "--out", s(&scene)]).unwrap();
    let report_path = dir.path().join("self.json");
    run_args(&["evaluate", "--mesh", s(&scene.join("gt_mesh.obj")), "--scene", s(&scene), "--out", s(&report_path)]).unwrap();
    let r = Report::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(r.get("chamfer").unwrap() <= 0.01, "{r:?}");
    assert!(r.get("reprojection_iou_loss").unwrap() <= 0.01);
    assert!(fs::read_to_string(dir.path().join("self.txt")).unwrap().contains("chamfer = "));

    let empty = dir.path().join("empty.obj");
    fs::write(&empty, "").unwrap();
    let report_path = dir.path().join("empty.json");
    run_args(&["evaluate", "--mesh", s(&empty), "--scene", s(&scene), "--out", s(&report_path)]).unwrap();
    let r = Report::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!((r.get("reprojection_iou_loss").unwrap() - 1.0).abs() < 1e-6);
    assert!(r.get("chamfer").is_none());

    fs::remove_file(scene.join("gt_mesh.obj")).unwrap();
    let report_path = dir.path().join("nogt.json");
    run_args(&["evaluate", "--mesh", s(&empty), "--scene", s(&scene), "--out", s(&report_path)]).unwrap();
    let r = Report::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(r.get("chamfer").is_none() && r.notes.iter().any(|n| n.contains("ground-truth mesh missing")));
}

fn exit_code(args: &[&str]) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_evrecon")).args(args).output().unwrap().status.code().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&["dataset"]), 2);
    assert_eq!(exit_code(&["frobnicate"]), 2);
    let bad = write_config(dir.path(), "bad.toml", "[optim]\nlr = -1.0\n");
    assert_eq!(exit_code(&["dataset", "--config", s(&bad), "--out", s(&dir.path().join("x"))]), 2);
    assert_eq!(exit_code(&["carve", "--scene", s(&dir.path().join("missing")), "--out", s(&dir.path().join("h.obj"))]), 3);

    let cfg = write_config(dir.path(), "c.toml", "[camera]\nwidth = 32\nheight = 32\nfocal = 32.0\n[trajectory]\nn_views = 3\n");
    let scene = dir.path().join("scene");
    assert_eq!(exit_code(&["dataset", "--config", s(&cfg), "--out", s(&scene)]), 0);
    fs::remove_file(scene.join("masks/mask_0001.pgm")).unwrap();
    assert_eq!(exit_code(&["carve", "--scene", s(&scene), "--out", s(&dir.path().join("h.obj"))]), 3);
    assert_eq!(exit_code(&["evaluate", "--mesh", s(&dir.path().join("none.obj")), "--scene", s(&scene), "--out", s(&dir.path().join("r.json"))]), 3);

    let scene2 = dir.path().join("scene2");
    assert_eq!(exit_code(&["dataset", "--config", s(&cfg), "--out", s(&scene2)]), 0);
    let blowup = write_config(dir.path(), "blowup.toml", "[camera]\nwidth = 32\nheight = 32\nfocal = 32.0\n[optim]\nlr = 1e300\n");
    assert_eq!(
        exit_code(&["reconstruct", "--scene", s(&scene2), "--config", s(&blowup), "--iterations", "20", "--out", s(&dir.path().join("r.obj"))]),
        4
    );
}
