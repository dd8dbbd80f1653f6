//! Silhouette-driven mesh reconstruction from simulated event-camera orbits.
//!
//! The pipeline renders a mesh along an orbit ([`camera`], [`render`]),
//! converts the intensity video to events with a contrast-threshold model
//! ([`eventsim`]), bins events into count-based histogram frames
//! ([`eventframes`]), recovers silhouettes ([`silext`]) and deforms a template
//! sphere under multi-view soft-silhouette losses ([`diffrender`], [`losses`],
//! [`meshopt`]). A voxel-carving baseline lives in [`hull`] and the evaluation
//! suite in [`metrics`].

pub mod camera;
pub mod diffrender;
pub mod error;
pub mod eventframes;
pub mod eventsim;
pub mod geometry;
pub mod hull;
pub mod image;
pub mod losses;
mod mc_tables;
pub mod meshopt;
pub mod metrics;
pub mod render;
pub mod silext;

pub use camera::{CameraPose, Intrinsics, Trajectory};
pub use diffrender::{GradientMap, SoftRenderConfig};
pub use error::{Error, Result};
pub use eventframes::EventFrame;
pub use eventsim::{Event, EventStream, SimConfig};
pub use geometry::{PointCloud, TriangleMesh};
pub use hull::VoxelGrid;
pub use image::{IntensityFrame, SilhouetteMask};
pub use losses::LossWeights;
pub use meshopt::OptimConfig;

pub type Vec3 = nalgebra::Vector3<f64>;
