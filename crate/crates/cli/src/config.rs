//! Pipeline configuration, one TOML section per stage.

use std::path::Path;

use evrecon_core::camera::{AugmentationParams, OrbitParams};
use evrecon_core::losses::LossWeights;
use evrecon_core::meshopt::OptimConfig;
use evrecon_core::silext::ExtractParams;
use evrecon_core::{Intrinsics, SimConfig, SoftRenderConfig, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub scene: SceneSection,
    pub camera: CameraSection,
    pub trajectory: TrajectorySection,
    pub render: RenderSection,
    pub events: EventsSection,
    pub frames: FramesSection,
    pub extract: ExtractSection,
    pub optim: OptimSection,
    pub carve: CarveSection,
    pub evaluate: EvaluateSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneSection::default(),
            camera: CameraSection::default(),
            trajectory: TrajectorySection::default(),
            render: RenderSection::default(),
            events: EventsSection::default(),
            frames: FramesSection::default(),
            extract: ExtractSection::default(),
            optim: OptimSection::default(),
            carve: CarveSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// `sphere`, `cube`, `blob` or a path to an OBJ file.
    pub mesh: String,
    /// Sphere and blob radius, cube half-extent, or OBJ scale factor.
    pub size: f64,
    pub subdivisions: u32,
    /// Seed of the blob's radial perturbation, independent of the run seed.
    pub shape_seed: u64,
    /// Std (m) of the random per-axis offset applied to the object.
    pub offset_sigma: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { mesh: "blob".into(), size: 0.5, subdivisions: 4, shape_seed: 0, offset_sigma: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self { width: 280, height: 280, focal: 280.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub n_views: usize,
    pub distance: f64,
    pub elevation_deg: f64,
    pub frame_interval_us: i64,
    pub augment: bool,
    pub distance_amplitude: f64,
    pub distance_frequency: f64,
    pub elevation_amplitude_deg: f64,
    pub elevation_frequency: f64,
    pub micro_sigma_deg: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let orbit = OrbitParams::default();
        let aug = AugmentationParams::default();
        Self {
            n_views: orbit.n_views,
            distance: orbit.base_distance,
            elevation_deg: orbit.base_elevation_deg,
            frame_interval_us: orbit.frame_interval_us,
            augment: true,
            distance_amplitude: aug.distance_amplitude,
            distance_frequency: aug.distance_frequency,
            elevation_amplitude_deg: aug.elevation_amplitude_deg,
            elevation_frequency: aug.elevation_frequency,
            micro_sigma_deg: aug.micro_sigma_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    /// `uniform`, `checkerboard` or a path to a grayscale PGM.
    pub background: String,
    pub background_level: f64,
    pub checker_cell: usize,
    pub light_dir: [f64; 3],
}

impl Default for RenderSection {
    fn default() -> Self {
        Self { background: "uniform".into(), background_level: 0.05, checker_cell: 20, light_dir: [0.4, 1.0, 0.6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsSection {
    pub contrast_threshold: f64,
    pub threshold_sigma: [f64; 2],
    pub noise_sigma: f64,
    pub log_eps: f64,
}

impl EventsSection {
    fn validate(&self) -> Result<(), CliError> {
        let ok = self.contrast_threshold > 0.0
            && self.threshold_sigma.iter().all(|s| *s >= 0.0)
            && self.noise_sigma >= 0.0
            && self.log_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CliError::BadArgs("events: threshold and log_eps must be positive, std values non-negative".into()))
        }
    }
}

impl Default for EventsSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            contrast_threshold: s.contrast_threshold,
            threshold_sigma: s.threshold_sigma,
            noise_sigma: s.noise_sigma,
            log_eps: s.log_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramesSection {
    /// Events per frame; 0 derives it from the view count.
    pub count: usize,
    pub denoise_min_count: u32,
}

impl Default for FramesSection {
    fn default() -> Self {
        Self { count: 0, denoise_min_count: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub dilate_radius: usize,
    pub min_component: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        let p = ExtractParams::default();
        Self { dilate_radius: p.dilate_radius, min_component: p.min_component }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub iterations: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub views_per_iter: usize,
    pub template_subdiv: u32,
    pub sigma: f64,
    pub lambda_iou: f64,
    pub lambda_lap: f64,
    pub lambda_smooth: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let o = OptimConfig::default();
        Self {
            iterations: o.iterations,
            lr: o.lr,
            betas: [o.betas.0, o.betas.1],
            eps: o.eps,
            views_per_iter: o.views_per_iter,
            template_subdiv: o.template_subdiv,
            sigma: o.render.sigma,
            lambda_iou: o.weights.iou,
            lambda_lap: o.weights.lap,
            lambda_smooth: o.weights.smooth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarveSection {
    pub resolution: usize,
    pub half_extent: f64,
}

impl Default for CarveSection {
    fn default() -> Self {
        Self { resolution: 64, half_extent: 1.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub chamfer_samples: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { chamfer_samples: evrecon_core::metrics::CHAMFER_SAMPLES }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::BadArgs(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.intrinsics()?;
        self.events.validate()?;
        if self.trajectory.n_views < 2 {
            return Err(CliError::BadArgs("trajectory.n_views must be at least 2".into()));
        }
        if !(self.scene.size > 0.0) || !(self.scene.offset_sigma >= 0.0) {
            return Err(CliError::BadArgs("scene.size must be positive and scene.offset_sigma non-negative".into()));
        }
        if self.carve.resolution < 2 || !(self.carve.half_extent > 0.0) {
            return Err(CliError::BadArgs("carve.resolution must be ≥ 2 and carve.half_extent positive".into()));
        }
        if self.evaluate.chamfer_samples == 0 {
            return Err(CliError::BadArgs("evaluate.chamfer_samples must be positive".into()));
        }
        self.optim_config().validate()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics, CliError> {
        let c = &self.camera;
        Ok(Intrinsics::new(c.width, c.height, c.focal, c.width as f64 / 2.0, c.height as f64 / 2.0)?)
    }

    pub fn orbit(&self, target: Vec3) -> OrbitParams {
        let t = &self.trajectory;
        let aug = if t.augment {
            AugmentationParams {
                distance_amplitude: t.distance_amplitude,
                distance_frequency: t.distance_frequency,
                elevation_amplitude_deg: t.elevation_amplitude_deg,
                elevation_frequency: t.elevation_frequency,
                micro_sigma_deg: t.micro_sigma_deg,
            }
        } else {
            AugmentationParams::none()
        };
        OrbitParams {
            n_views: t.n_views,
            base_distance: t.distance,
            base_elevation_deg: t.elevation_deg,
            target,
            frame_interval_us: t.frame_interval_us,
            aug,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let e = &self.events;
        SimConfig {
            contrast_threshold: e.contrast_threshold,
            threshold_sigma: e.threshold_sigma,
            noise_sigma: e.noise_sigma,
            log_eps: e.log_eps,
            seed: derive_seed(self.seed, Stream::Events),
        }
    }

    pub fn extract_params(&self) -> ExtractParams {
        ExtractParams { dilate_radius: self.extract.dilate_radius, min_component: self.extract.min_component }
    }

    pub fn optim_config(&self) -> OptimConfig {
        let o = &self.optim;
        let defaults = LossWeights::default();
        OptimConfig {
            iterations: o.iterations,
            lr: o.lr,
            betas: (o.betas[0], o.betas[1]),
            eps: o.eps,
            views_per_iter: o.views_per_iter,
            seed: derive_seed(self.seed, Stream::Optim),
            weights: LossWeights { iou: o.lambda_iou, lap: o.lambda_lap, smooth: o.lambda_smooth, ..defaults },
            render: SoftRenderConfig { sigma: o.sigma, support_px: None },
            template_subdiv: o.template_subdiv,
        }
    }
}

/// Independent random streams drawn from the run seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Trajectory = 1,
    Albedo = 2,
    Offset = 3,
    Events = 4,
    Optim = 5,
    Chamfer = 6,
}

pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    // splitmix64 finalizer over (seed, stream)
    let mut z = seed ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
