//! Camera poses, pinhole projection, look-at frames and orbit trajectories.
//!
//! Poses are world-to-view: `x_view = R(q) * x_world + t`. The view frame has
//! +x to the right, +y down the image and +z along the optical axis.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::Vec3;

/// Rotates `v` by the unit quaternion `q`.
pub fn quaternion_rotate(q: &UnitQuaternion<f64>, v: &Vec3) -> Vec3 {
    let u = q.imag();
    let w = q.scalar();
    let uv = u.cross(v);
    v + uv * (2.0 * w) + u.cross(&uv) * 2.0
}

/// Camera pose `p = (t, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl CameraPose {
    /// Builds a pose from `t` and a (not necessarily normalized) quaternion
    /// given as `(w, x, y, z)`. The sign is canonicalized to `w >= 0`.
    pub fn new(translation: Vec3, wxyz: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let n = q.norm();
        if !(n > 1e-12 && n.is_finite()) || !translation.iter().all(|c| c.is_finite()) {
            return invalid("pose needs a finite translation and a non-zero quaternion");
        }
        // already-unit input is kept bit-exact so text round trips are lossless
        let unit = if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Self::from_unit(translation, unit))
    }

    pub fn from_unit(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation: canonical(rotation) }
    }

    pub fn identity() -> Self {
        Self { translation: Vec3::zeros(), rotation: UnitQuaternion::identity() }
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn to_view(&self, p_world: &Vec3) -> Vec3 {
        quaternion_rotate(&self.rotation, p_world) + self.translation
    }

    /// Camera centre in world coordinates, the inverse of the world-to-view transform applied to 0.
    pub fn center(&self) -> Vec3 {
        quaternion_rotate(&self.rotation.inverse(), &(-self.translation))
    }

    /// Equality up to `tol`, treating `q` and `-q` as the same rotation.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        let a = self.wxyz();
        let b = other.wxyz();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let s = if dot < 0.0 { -1.0 } else { 1.0 };
        (self.translation - other.translation).amax() <= tol
            && a.iter().zip(&b).all(|(x, y)| (x - s * y).abs() <= tol)
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(width: usize, height: usize, focal: f64, cx: f64, cy: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid("image dimensions must be positive");
        }
        if !(focal > 0.0 && focal.is_finite()) {
            return invalid(format!("focal length must be positive, got {focal}"));
        }
        Ok(Self { width, height, focal, cx, cy })
    }

    /// Square image with the principal point at its centre.
    pub fn square(size: usize, focal: f64) -> Result<Self> {
        Self::new(size, size, focal, size as f64 / 2.0, size as f64 / 2.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { width: 280, height: 280, focal: 280.0, cx: 140.0, cy: 140.0 }
    }
}

/// Pinhole projection of a point; `u`, `v` are NaN when the point is behind
/// the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    pub fn is_behind(&self) -> bool {
        !(self.depth > 0.0)
    }
}

pub fn project_view(k: &Intrinsics, p_view: &Vec3) -> Projection {
    if p_view.z > 0.0 {
        Projection {
            u: k.focal * p_view.x / p_view.z + k.cx,
            v: k.focal * p_view.y / p_view.z + k.cy,
            depth: p_view.z,
        }
    } else {
        Projection { u: f64::NAN, v: f64::NAN, depth: p_view.z }
    }
}

pub fn project(pose: &CameraPose, k: &Intrinsics, p_world: &Vec3) -> Projection {
    project_view(k, &pose.to_view(p_world))
}

/// Pose at `eye` whose optical axis points at `target`, with `up` mapping to
/// the upward image direction.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Result<CameraPose> {
    let forward = target - eye;
    if !(forward.norm() > 1e-12) {
        return invalid("look_at: eye and target coincide");
    }
    let z = forward.normalize();
    let right = z.cross(up);
    if !(right.norm() > 1e-9 * up.norm().max(1e-300)) || !(up.norm() > 0.0) {
        return invalid("look_at: up vector is parallel to the viewing direction");
    }
    let x = right.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let pose = CameraPose::from_unit(Vec3::zeros(), q);
    Ok(CameraPose { translation: -quaternion_rotate(&pose.rotation, eye), ..pose })
}

/// Ordered poses with strictly increasing timestamps in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<CameraPose>,
    timestamps_us: Vec<i64>,
}

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>, timestamps_us: Vec<i64>) -> Result<Self> {
        if poses.len() != timestamps_us.len() {
            return invalid("trajectory needs one timestamp per pose");
        }
        if timestamps_us.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("trajectory timestamps must be strictly increasing");
        }
        Ok(Self { poses, timestamps_us })
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn timestamps_us(&self) -> &[i64] {
        &self.timestamps_us
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Index of the pose whose timestamp is closest to `t_us` (earlier pose on ties).
    pub fn nearest(&self, t_us: f64) -> Option<usize> {
        let after = self.timestamps_us.partition_point(|&t| (t as f64) < t_us);
        match (after.checked_sub(1), (after < self.len()).then_some(after)) {
            (Some(b), Some(a)) => {
                if t_us - self.timestamps_us[b] as f64 <= self.timestamps_us[a] as f64 - t_us {
                    Some(b)
                } else {
                    Some(a)
                }
            }
            (Some(b), None) => Some(b),
            (None, a) => a,
        }
    }

    /// One `t_us tx ty tz qw qx qy qz` line per pose.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (pose, t) in self.poses.iter().zip(&self.timestamps_us) {
            let [w, x, y, z] = pose.wxyz();
            let tr = pose.translation;
            let _ = writeln!(out, "{t} {} {} {} {w} {x} {y} {z}", tr.x, tr.y, tr.z);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut poses = Vec::new();
        let mut stamps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |message: &str| Error::Parse { line: line_no, message: message.to_string() };
            if fields.len() != 8 {
                return Err(bad("expected `t_us tx ty tz qw qx qy qz`"));
            }
            let t: i64 = fields[0].parse().map_err(|_| bad("bad timestamp"))?;
            let v: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_>>()?;
            let pose = CameraPose::new(Vec3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]])
                .map_err(|e| bad(&e.to_string()))?;
            poses.push(pose);
            stamps.push(t);
        }
        Self::new(poses, stamps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Handheld-motion augmentation of an orbit. All-zero disables it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationParams {
    /// Amplitude of the slow distance oscillation (meters).
    pub distance_amplitude: f64,
    /// Distance oscillation cycles per orbit.
    pub distance_frequency: f64,
    /// Amplitude of the slow elevation oscillation (degrees).
    pub elevation_amplitude_deg: f64,
    /// Elevation oscillation cycles per orbit.
    pub elevation_frequency: f64,
    /// Std of per-view elevation and azimuth jitter (degrees).
    pub micro_sigma_deg: f64,
}

impl AugmentationParams {
    pub fn none() -> Self {
        Self {
            distance_amplitude: 0.0,
            distance_frequency: 0.0,
            elevation_amplitude_deg: 0.0,
            elevation_frequency: 0.0,
            micro_sigma_deg: 0.0,
        }
    }
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            distance_amplitude: 0.1,
            distance_frequency: 2.0,
            elevation_amplitude_deg: 10.0,
            elevation_frequency: 1.0,
            micro_sigma_deg: 0.5,
        }
    }
}

/// Orbit description for [`generate_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitParams {
    pub n_views: usize,
    pub base_distance: f64,
    pub base_elevation_deg: f64,
    /// Point the camera looks at (the object position).
    pub target: Vec3,
    pub frame_interval_us: i64,
    pub aug: AugmentationParams,
}

impl Default for OrbitParams {
    fn default() -> Self {
        Self {
            n_views: 45,
            base_distance: 1.8,
            base_elevation_deg: 30.0,
            target: Vec3::zeros(),
            frame_interval_us: 10_000,
            aug: AugmentationParams::default(),
        }
    }
}

/// World-space camera position on an orbit around `target` (y is up).
pub fn orbit_eye(target: &Vec3, distance: f64, elevation_deg: f64, azimuth_deg: f64) -> Vec3 {
    let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    target + Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin()) * distance
}

/// Full 360 degree orbit starting at a seeded random azimuth.
pub fn generate_trajectory(params: &OrbitParams, seed: u64) -> Result<Trajectory> {
    let n = params.n_views;
    if n < 2 {
        return invalid("a trajectory needs at least 2 views");
    }
    if !(params.base_distance > 0.0) || params.frame_interval_us <= 0 {
        return invalid("orbit distance and frame interval must be positive");
    }
    let aug = &params.aug;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_azimuth = rng.random_range(0.0..360.0);
    let distance_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let micro = Normal::new(0.0, aug.micro_sigma_deg.max(0.0))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let up = Vec3::new(0.0, 1.0, 0.0);
    let mut poses = Vec::with_capacity(n);
    let mut stamps = Vec::with_capacity(n);
    for i in 0..n {
        let frac = i as f64 / n as f64;
        let eps_elevation = micro.sample(&mut rng);
        let eps_azimuth = micro.sample(&mut rng);
        let azimuth = start_azimuth + 360.0 * frac + eps_azimuth;
        let elevation = params.base_elevation_deg
            + aug.elevation_amplitude_deg
                * (std::f64::consts::TAU * aug.elevation_frequency * frac).sin()
            + eps_elevation;
        let distance = params.base_distance
            + aug.distance_amplitude
                * (std::f64::consts::TAU * aug.distance_frequency * frac + distance_phase).sin();
        let eye = orbit_eye(&params.target, distance, elevation, azimuth);
        poses.push(look_at(&eye, &params.target, &up)?);
        stamps.push(i as i64 * params.frame_interval_us);
    }
    Trajectory::new(poses, stamps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quat(axis: Vec3, angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
    }

    #[test]
    fn rotate_identity_and_quarter_turn() {
        let v = Vec3::new(0.3, -2.0, 5.0);
        assert_eq!(quaternion_rotate(&UnitQuaternion::identity(), &v), v);
        let r = quaternion_rotate(&quat(Vec3::z(), std::f64::consts::FRAC_PI_2), &Vec3::x());
        assert!((r - Vec3::y()).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn rotation_is_isometry_and_conjugate_inverts(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            vx in -10.0f64..10.0, vy in -10.0f64..10.0, vz in -10.0f64..10.0,
        ) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-3);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
            let v = Vec3::new(vx, vy, vz);
            let r = quaternion_rotate(&q, &v);
            prop_assert!((r.norm() - v.norm()).abs() <= 1e-12 * v.norm().max(1.0));
            let back = quaternion_rotate(&q.conjugate(), &r);
            prop_assert!((back - v).norm() <= 1e-12 * v.norm().max(1.0));
        }
    }

    #[test]
    fn look_at_down_negative_z() {
        let pose = look_at(&Vec3::new(0.0, 0.0, 3.0), &Vec3::zeros(), &Vec3::y()).unwrap();
        let r = pose.rotation_matrix();
        // third row of world-to-view is the camera z axis in world coordinates
        let cam_z = r.row(2).transpose();
        assert!((cam_z - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((pose.to_view(&Vec3::zeros()) - Vec3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        // world up projects upward in the image (negative view y)
        assert!(pose.to_view(&Vec3::y()).y < 0.0);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!(pose.wxyz()[0] >= 0.0);
    }

    #[test]
    fn look_at_rejects_degenerate_up() {
        let eye = Vec3::new(0.0, 2.0, 0.0);
        assert!(look_at(&eye, &Vec3::zeros(), &Vec3::y()).is_err());
        assert!(look_at(&eye, &eye, &Vec3::x()).is_err());
    }

    #[test]
    fn projection_examples() {
        let k = Intrinsics::default();
        let id = CameraPose::identity();
        let p = project(&id, &k, &Vec3::new(0.0, 0.0, 2.5));
        assert_eq!((p.u, p.v, p.depth), (140.0, 140.0, 2.5));
        let p = project(&id, &k, &Vec3::new(0.1, 0.0, 1.0));
        assert!((p.u - 168.0).abs() < 1e-12);
        assert!(project(&id, &k, &Vec3::new(0.0, 0.0, -1.0)).is_behind());
    }

    proptest! {
        #[test]
        fn look_at_target_hits_principal_point(
            ex in -5.0f64..5.0, ey in -5.0f64..5.0, ez in -5.0f64..5.0,
            tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0,
        ) {
            let eye = Vec3::new(ex, ey, ez);
            let target = Vec3::new(tx, ty, tz);
            prop_assume!((eye - target).norm() > 0.1);
            prop_assume!((eye - target).normalize().cross(&Vec3::y()).norm() > 1e-3);
            let pose = look_at(&eye, &target, &Vec3::y()).unwrap();
            let k = Intrinsics::default();
            let p = project(&pose, &k, &target);
            prop_assert!((p.u - k.cx).abs() < 1e-6 && (p.v - k.cy).abs() < 1e-6);
            prop_assert!((pose.center() - eye).norm() < 1e-9);
        }
    }

    fn azimuth_of(pose: &CameraPose) -> f64 {
        let c = pose.center();
        c.z.atan2(c.x).to_degrees()
    }

    #[test]
    fn unaugmented_orbit_is_regular() {
        let params = OrbitParams { n_views: 4, aug: AugmentationParams::none(), ..Default::default() };
        let traj = generate_trajectory(&params, 5).unwrap();
        assert_eq!(traj.len(), 4);
        let az: Vec<f64> = traj.poses().iter().map(azimuth_of).collect();
        for (i, pose) in traj.poses().iter().enumerate() {
            let c = pose.center();
            assert!((c.norm() - 1.8).abs() < 1e-9);
            assert!(((c.y / c.norm()).asin().to_degrees() - 30.0).abs() < 1e-9);
            if i > 0 {
                let step = (az[i] - az[i - 1]).rem_euclid(360.0);
                assert!((step - 90.0).abs() < 1e-9, "step {step}");
            }
        }
    }

    #[test]
    fn trajectory_is_seed_deterministic() {
        let params = OrbitParams::default();
        assert_eq!(generate_trajectory(&params, 9).unwrap(), generate_trajectory(&params, 9).unwrap());
        assert_ne!(generate_trajectory(&params, 9).unwrap(), generate_trajectory(&params, 10).unwrap());
    }

    #[test]
    fn distance_oscillation_stays_in_band() {
        let aug = AugmentationParams { distance_amplitude: 0.1, ..AugmentationParams::default() };
        let params = OrbitParams { n_views: 12, aug, ..Default::default() };
        for seed in 0..1000 {
            for pose in generate_trajectory(&params, seed).unwrap().poses() {
                let d = pose.center().norm();
                assert!((1.7 - 1e-9..=1.9 + 1e-9).contains(&d), "seed {seed}: {d}");
            }
        }
    }

    #[test]
    fn trajectory_text_roundtrip() {
        let traj = generate_trajectory(&OrbitParams::default(), 1).unwrap();
        let back = Trajectory::parse(&traj.to_text()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn trajectory_rejects_unordered_stamps() {
        let p = CameraPose::identity();
        assert!(Trajectory::new(vec![p, p], vec![5, 5]).is_err());
    }

    #[test]
    fn nearest_pose_lookup() {
        let p = CameraPose::identity();
        let t = Trajectory::new(vec![p, p, p], vec![0, 10, 20]).unwrap();
        assert_eq!(t.nearest(-4.0), Some(0));
        assert_eq!(t.nearest(4.0), Some(0));
        assert_eq!(t.nearest(5.0), Some(0));
        assert_eq!(t.nearest(6.0), Some(1));
        assert_eq!(t.nearest(99.0), Some(2));
    }
}
