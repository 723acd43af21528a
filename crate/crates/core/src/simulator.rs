//! Idealized stereo event camera looking at textured fronto-parallel planes.
//!
//! Frames are rendered with a cheap analytic antialiasing filter, converted to
//! log intensity, and every crossing of a global lattice of contrast levels
//! between consecutive frames becomes one event. Using a fixed lattice (rather
//! than per-pixel reference levels) makes the event set of a path and of the
//! same path played backwards identical up to polarity.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Se3, StereoRig, TrajectoryDb};
use crate::io::FloatMap;
use crate::time_surface::{Event, Polarity};

/// A plane at world depth `depth` facing the cameras, covered by a random
/// binary grid of square cells.
#[derive(Clone, Debug, PartialEq)]
pub struct TexturedPlane {
    pub depth: f64,
    /// Side of one texture cell in meters.
    pub cell: f64,
    /// In-plane rotation of the grid in radians.
    pub angle: f64,
    /// World-frame extent `(x_min, x_max, y_min, y_max)` in meters.
    pub extent: (f64, f64, f64, f64),
    pub dark: f64,
    pub bright: f64,
    pub seed: u64,
}

impl TexturedPlane {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1, y0, y1) = self.extent;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Fraction of a footprint of side `w` centered at `(x, y)` inside the extent.
    fn coverage(&self, x: f64, y: f64, w: f64) -> f64 {
        let (x0, x1, y0, y1) = self.extent;
        let span = |lo: f64, hi: f64, c: f64| {
            let a = (c - 0.5 * w).max(lo);
            let b = (c + 0.5 * w).min(hi);
            ((b - a) / w).clamp(0.0, 1.0)
        };
        span(x0, x1, x) * span(y0, y1, y)
    }

    fn cell_value(&self, i: i64, j: i64) -> f64 {
        if hash_cell(i, j, self.seed) & 1 == 1 {
            self.bright
        } else {
            self.dark
        }
    }

    /// Texture averaged over a footprint of side `w` (meters) around `(x, y)`.
    /// `(s, c)` is the sine and cosine of the grid angle.
    ///
    /// The footprint is treated as a square aligned with the grid, so the
    /// average factors into two 1-D box filters.
    fn texture(&self, x: f64, y: f64, w: f64, (s, c): (f64, f64)) -> f64 {
        let u = (c * x + s * y) / self.cell;
        let v = (-s * x + c * y) / self.cell;
        let f = (w / self.cell).min(1.0);
        let (iu, wu) = box_weights(u, f);
        let (iv, wv) = box_weights(v, f);
        let mut acc = 0.0;
        for (a, wa) in [(iu, 1.0 - wu.1), (iu + wu.0, wu.1)] {
            if wa == 0.0 {
                continue;
            }
            for (b, wb) in [(iv, 1.0 - wv.1), (iv + wv.0, wv.1)] {
                if wb == 0.0 {
                    continue;
                }
                acc += wa * wb * self.cell_value(a, b);
            }
        }
        acc
    }
}

/// Cell index under `u` plus `(neighbor offset, neighbor weight)` for a box of
/// width `f < 1` in cell units.
fn box_weights(u: f64, f: f64) -> (i64, (i64, f64)) {
    let i = u.floor();
    let lo = u - 0.5 * f;
    let hi = u + 0.5 * f;
    if f <= 0.0 {
        return (i as i64, (1, 0.0));
    }
    if lo < i {
        (i as i64, (-1, (i - lo) / f))
    } else if hi > i + 1.0 {
        (i as i64, (1, (hi - i - 1.0) / f))
    } else {
        (i as i64, (1, 0.0))
    }
}

fn hash_cell(i: i64, j: i64, seed: u64) -> u64 {
    let mut z = seed
        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub planes: Vec<TexturedPlane>,
    /// Intensity where no plane is hit.
    pub background: f64,
}

impl SceneConfig {
    /// Three horizontal bands at 1.1, 1.5 and 2.2 m with differently rotated
    /// textures, so that both image axes see edges under any translation. No
    /// depth maps to an integer disparity on the default rig, which would make
    /// the two cameras sample identical texture points.
    pub fn three_planes(seed: u64) -> Self {
        let plane = |depth: f64, cell: f64, deg: f64, y0: f64, y1: f64, k: u64| TexturedPlane {
            depth,
            cell,
            angle: deg.to_radians(),
            extent: (-20.0, 20.0, y0, y1),
            dark: 0.3,
            bright: 0.7,
            seed: seed.wrapping_mul(31).wrapping_add(k),
        };
        let mut planes = vec![
            plane(1.1, 0.08, 20.0, -20.0, -0.25, 1),
            plane(1.5, 0.09, -35.0, -0.3, 0.3, 2),
            plane(2.2, 0.10, 50.0, 0.4, 20.0, 3),
        ];
        planes.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        Self {
            planes,
            background: 0.5,
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Option<Self> {
        match name {
            "three-planes" => Some(Self::three_planes(seed)),
            _ => None,
        }
    }

    pub fn depth_range(&self) -> (f64, f64) {
        self.planes.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            (lo.min(p.depth), hi.max(p.depth))
        })
    }

    /// Composited intensity along one ray. `dir` has unit camera-frame depth so
    /// ray parameters are depths. `trig` holds each plane's grid-angle sine and
    /// cosine.
    fn shade(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, fx: f64, trig: &[(f64, f64)]) -> f64 {
        let mut remaining = 1.0;
        let mut value = 0.0;
        for (p, &sc) in self.planes.iter().zip(trig) {
            if dir.z == 0.0 {
                continue;
            }
            let s = (p.depth - origin.z) / dir.z;
            if s <= 0.0 {
                continue;
            }
            let hit = origin + dir * s;
            let w = s / fx;
            let cov = p.coverage(hit.x, hit.y, w);
            if cov <= 0.0 {
                continue;
            }
            value += remaining * cov * p.texture(hit.x, hit.y, w, sc);
            remaining *= 1.0 - cov;
            if remaining <= 0.0 {
                break;
            }
        }
        value + remaining * self.background
    }

    fn check_pose(&self, pose: &Se3) -> Result<()> {
        let o = pose.translation();
        for p in &self.planes {
            if (o.z - p.depth).abs() < 1e-9 && p.contains(o.x, o.y) {
                return Err(Error::CameraInsidePlane);
            }
        }
        Ok(())
    }
}

/// Grayscale image in `(0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl IntensityImage {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Renders the scene seen by a camera with camera-to-world pose `pose`.
pub fn render_intensity(scene: &SceneConfig, pose: &Se3, cam: &CameraModel) -> Result<IntensityImage> {
    scene.check_pose(pose)?;
    let rot = pose.rotation_matrix();
    let origin = pose.translation();
    let trig: Vec<_> = scene.planes.iter().map(|p| p.angle.sin_cos()).collect();
    let mut data = vec![0.0; cam.width * cam.height];
    data.par_chunks_mut(cam.width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let d = rot * cam.bearing(&Vector2::new(x as f64, y as f64));
                // `d` keeps unit camera-frame depth, so ray parameters are depths.
                *out = scene.shade(&origin, &d, cam.fx, &trig);
            }
        });
    Ok(IntensityImage {
        width: cam.width,
        height: cam.height,
        data,
    })
}

/// Exact inverse depth of the front-most plane seen through `pixel`.
pub fn ground_truth_inverse_depth(
    scene: &SceneConfig,
    pose: &Se3,
    cam: &CameraModel,
    pixel: &Vector2<f64>,
) -> Option<f64> {
    let d = pose.rotation_matrix() * cam.bearing(pixel);
    let origin = pose.translation();
    scene
        .planes
        .iter()
        .filter_map(|p| {
            let s = (p.depth - origin.z) / d.z;
            let hit = origin + d * s;
            (s > 0.0 && p.contains(hit.x, hit.y)).then_some(s)
        })
        .min_by(f64::total_cmp)
        .map(|s| 1.0 / s)
}

/// Ground-truth inverse depth for every pixel (NaN where no plane is hit).
pub fn ground_truth_map(scene: &SceneConfig, pose: &Se3, cam: &CameraModel, t: f64) -> FloatMap {
    let mut data = vec![f64::NAN; cam.width * cam.height];
    data.par_chunks_mut(cam.width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                if let Some(rho) =
                    ground_truth_inverse_depth(scene, pose, cam, &Vector2::new(x as f64, y as f64))
                {
                    *out = rho;
                }
            }
        });
    FloatMap::new(cam.width, cam.height, t, data)
}

/// Constant-velocity motion primitives plus a smooth 6-DoF path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    Static,
    TranslateX,
    TranslateY,
    TranslateZ,
    RotateZ,
    General,
}

impl Motion {
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "static" => Motion::Static,
            "translate-x" => Motion::TranslateX,
            "translate-y" => Motion::TranslateY,
            "translate-z" => Motion::TranslateZ,
            "rotate-z" => Motion::RotateZ,
            "general" | "6dof" => Motion::General,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Motion::Static => "static",
            Motion::TranslateX => "translate-x",
            Motion::TranslateY => "translate-y",
            Motion::TranslateZ => "translate-z",
            Motion::RotateZ => "rotate-z",
            Motion::General => "general",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimTrajectory {
    pub motion: Motion,
    pub duration: f64,
    /// Linear speed in m/s.
    pub speed: f64,
    /// Angular speed in rad/s.
    pub angular_speed: f64,
    /// Play the path backwards (ends where the forward path starts).
    pub reversed: bool,
}

impl SimTrajectory {
    pub fn new(motion: Motion, duration: f64) -> Self {
        Self {
            motion,
            duration,
            speed: 0.3,
            angular_speed: 0.3,
            reversed: false,
        }
    }

    /// Left camera-to-world pose at time `t` of the forward path.
    fn forward_pose(&self, t: f64) -> Se3 {
        let v = self.speed * t;
        match self.motion {
            Motion::Static => Se3::identity(),
            Motion::TranslateX => Se3::from_translation(Vector3::new(v, 0.0, 0.0)),
            Motion::TranslateY => Se3::from_translation(Vector3::new(0.0, v, 0.0)),
            Motion::TranslateZ => Se3::from_translation(Vector3::new(0.0, 0.0, v)),
            Motion::RotateZ => Se3::from_axis_angle(&Vector3::z(), self.angular_speed * t, Vector3::zeros()),
            Motion::General => {
                let tau = std::f64::consts::TAU;
                let a = self.speed / (tau * 0.25);
                let trans = Vector3::new(
                    a * (tau * 0.25 * t).sin(),
                    0.5 * a * (tau * 0.35 * t + 0.4).sin() - 0.5 * a * 0.4f64.sin(),
                    0.3 * a * (1.0 - (tau * 0.2 * t).cos()),
                );
                let b = self.angular_speed / (tau * 0.3);
                let rotvec = Vector3::new(
                    0.5 * b * (tau * 0.3 * t).sin(),
                    0.7 * b * (tau * 0.25 * t + 1.0).sin() - 0.7 * b * 1.0f64.sin(),
                    0.4 * b * (tau * 0.2 * t).sin(),
                );
                Se3::from_parts(nalgebra::UnitQuaternion::from_scaled_axis(rotvec), trans)
            }
        }
    }

    /// Pose at frame `i` of `frames`; exact mirror images for reversed paths.
    fn pose_at_frame(&self, i: usize, frames: usize) -> Se3 {
        let k = if self.reversed { frames - i } else { i };
        self.forward_pose(self.duration * k as f64 / frames as f64)
    }

    pub fn pose(&self, t: f64) -> Se3 {
        if self.reversed {
            self.forward_pose(self.duration - t)
        } else {
            self.forward_pose(t)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Log-intensity contrast threshold.
    pub contrast: f64,
    pub frame_rate: f64,
    /// Standard deviation of optional Gaussian timestamp noise in seconds.
    pub timestamp_jitter: f64,
    /// Rate of spurious background events per pixel, in Hz.
    pub noise_rate: f64,
    /// Interval between ground-truth depth maps (none when 0).
    pub depth_interval: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            contrast: 0.3,
            frame_rate: 1000.0,
            timestamp_jitter: 0.0,
            noise_rate: 0.0,
            depth_interval: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Sensor-like settings: 1 ms timestamp noise and 1 Hz per pixel of
    /// background activity.
    pub fn realistic(seed: u64) -> Self {
        Self {
            timestamp_jitter: 0.001,
            noise_rate: 1.0,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub left: Vec<Event>,
    pub right: Vec<Event>,
    /// Left camera-to-world poses at every frame.
    pub trajectory: TrajectoryDb,
    /// Ground-truth left inverse depth, at the configured interval.
    pub depth_maps: Vec<FloatMap>,
}

/// Largest image displacement of sampled scene points between two poses.
fn max_displacement(scene: &SceneConfig, a: &Se3, b: &Se3, cam: &CameraModel) -> f64 {
    let b_inv = b.inverse();
    let mut worst = 0.0f64;
    let steps = 8;
    for i in 0..=steps {
        for j in 0..=steps {
            let px = Vector2::new(
                (cam.width - 1) as f64 * i as f64 / steps as f64,
                (cam.height - 1) as f64 * j as f64 / steps as f64,
            );
            let d = a.rotation_matrix() * cam.bearing(&px);
            // Background pixels are treated as points on the farthest plane.
            let depth = ground_truth_inverse_depth(scene, a, cam, &px)
                .map(|r| 1.0 / r)
                .unwrap_or_else(|| scene.depth_range().1.max(1.0));
            let world = a.translation() + d * depth;
            let p = b_inv.transform_point(&world);
            if let Ok(u) = cam.project(&p) {
                worst = worst.max((u - px).norm());
            } else {
                worst = f64::INFINITY;
            }
        }
    }
    worst
}

/// Level crossings of one pixel between two log intensities.
fn crossings(
    l0: f64,
    l1: f64,
    t0: f64,
    dt: f64,
    contrast: f64,
    x: u16,
    y: u16,
    out: &mut Vec<Event>,
) {
    if l0 == l1 {
        return;
    }
    let (lo, hi) = if l0 < l1 { (l0, l1) } else { (l1, l0) };
    // levels k*C with lo < k*C <= hi
    let first = (lo / contrast).floor() as i64 + 1;
    let last = (hi / contrast).floor() as i64;
    let polarity = if l1 > l0 {
        Polarity::Positive
    } else {
        Polarity::Negative
    };
    for k in first..=last {
        let level = k as f64 * contrast;
        let alpha = ((level - l0) / (l1 - l0)).clamp(0.0, 1.0);
        out.push(Event::new(t0 + alpha * dt, x, y, polarity));
    }
}

fn frame_events(prev: &[f64], cur: &[f64], width: usize, t0: f64, dt: f64, contrast: f64) -> Vec<Event> {
    let mut out = Vec::new();
    for (i, (&a, &b)) in prev.iter().zip(cur).enumerate() {
        crossings(a, b, t0, dt, contrast, (i % width) as u16, (i / width) as u16, &mut out);
    }
    out
}

fn log_image(img: &IntensityImage) -> Vec<f64> {
    img.data.iter().map(|v| v.ln()).collect()
}

fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
}

/// Appends a homogeneous Poisson process of random-polarity events at
/// `rate` Hz per pixel.
fn add_background_noise(
    events: &mut Vec<Event>,
    cam: &CameraModel,
    duration: f64,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mean = rate * duration * (cam.width * cam.height) as f64;
    let count = Poisson::new(mean)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .sample(rng) as usize;
    events.reserve(count);
    for _ in 0..count {
        let polarity = if rng.random_bool(0.5) {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        events.push(Event::new(
            rng.random_range(0.0..duration),
            rng.random_range(0..cam.width) as u16,
            rng.random_range(0..cam.height) as u16,
            polarity,
        ));
    }
    Ok(())
}

/// Generates left and right event streams for the rig following `traj`.
pub fn simulate_events(
    scene: &SceneConfig,
    traj: &SimTrajectory,
    rig: &StereoRig,
    config: &SimConfig,
) -> Result<SimOutput> {
    if !(config.contrast > 0.0) {
        return Err(Error::InvalidConfig("contrast threshold must be > 0".into()));
    }
    if !(config.frame_rate > 0.0) || !(traj.duration > 0.0) {
        return Err(Error::InvalidConfig("frame rate and duration must be > 0".into()));
    }
    let frames = (traj.duration * config.frame_rate).round().max(1.0) as usize;
    let dt = traj.duration / frames as f64;
    let left_from_right = rig.right_from_left.inverse();
    let time_of = |i: usize| traj.duration * i as f64 / frames as f64;

    let mut trajectory = TrajectoryDb::new();
    let mut depth_maps = Vec::new();
    let mut next_depth = 0.0;
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut prev: Option<(Se3, Vec<f64>, Vec<f64>)> = None;

    for i in 0..=frames {
        let t = time_of(i);
        let pose = traj.pose_at_frame(i, frames);
        trajectory.push(t, pose)?;
        if config.depth_interval > 0.0 && t + 1e-9 >= next_depth {
            depth_maps.push(ground_truth_map(scene, &pose, &rig.left, t));
            next_depth += config.depth_interval;
        }
        let lit = log_image(&render_intensity(scene, &pose, &rig.left)?);
        let rit = log_image(&render_intensity(scene, &(pose * left_from_right), &rig.right)?);
        if let Some((prev_pose, pl, pr)) = &prev {
            let disp = max_displacement(scene, prev_pose, &pose, &rig.left);
            if disp >= 1.0 {
                return Err(Error::FrameRateTooLow(disp));
            }
            let t0 = time_of(i - 1);
            left.extend(frame_events(pl, &lit, rig.left.width, t0, dt, config.contrast));
            right.extend(frame_events(pr, &rit, rig.right.width, t0, dt, config.contrast));
        }
        prev = Some((pose, lit, rit));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if config.timestamp_jitter > 0.0 {
        let noise = Normal::new(0.0, config.timestamp_jitter)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for e in left.iter_mut().chain(right.iter_mut()) {
            e.t = (e.t + noise.sample(&mut rng)).clamp(0.0, traj.duration);
        }
    }
    if config.noise_rate > 0.0 {
        add_background_noise(&mut left, &rig.left, traj.duration, config.noise_rate, &mut rng)?;
        add_background_noise(&mut right, &rig.right, traj.duration, config.noise_rate, &mut rng)?;
    }
    sort_events(&mut left);
    sort_events(&mut right);
    Ok(SimOutput {
        left,
        right,
        trajectory,
        depth_maps,
    })
}

/// The default rig: 346x260 pixels, f = 200 px, 10 cm baseline.
pub fn default_rig() -> StereoRig {
    let cam = CameraModel::new(200.0, 200.0, 173.0, 130.0, 346, 260).expect("valid camera");
    StereoRig::rectified(cam, cam, 0.1).expect("valid rig")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_rig() -> StereoRig {
        let cam = CameraModel::new(100.0, 100.0, 60.0, 45.0, 120, 90).unwrap();
        StereoRig::rectified(cam, cam, 0.1).unwrap()
    }

    #[test]
    fn ground_truth_examples() {
        let scene = SceneConfig {
            planes: vec![TexturedPlane {
                depth: 2.0,
                cell: 0.1,
                angle: 0.0,
                extent: (-1.0, 1.0, -1.0, 1.0),
                dark: 0.3,
                bright: 0.7,
                seed: 1,
            }],
            background: 0.5,
        };
        let cam = small_rig().left;
        let c = Vector2::new(60.0, 45.0);
        assert_eq!(ground_truth_inverse_depth(&scene, &Se3::identity(), &cam, &c), Some(0.5));
        let closer = Se3::from_translation(Vector3::new(0.0, 0.0, 0.5));
        assert_relative_eq!(
            ground_truth_inverse_depth(&scene, &closer, &cam, &c).unwrap(),
            1.0 / 1.5,
            epsilon = 1e-12
        );
        let away = Se3::from_translation(Vector3::new(5.0, 0.0, 0.0));
        assert_eq!(ground_truth_inverse_depth(&scene, &away, &cam, &c), None);
        let img = render_intensity(&scene, &away, &cam).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.5));

        let inside = Se3::from_translation(Vector3::new(0.0, 0.0, 2.0));
        assert!(matches!(
            render_intensity(&scene, &inside, &cam),
            Err(Error::CameraInsidePlane)
        ));
    }

    #[test]
    fn pattern_scales_with_depth() {
        // A single bright cell centered on the optical axis.
        let plane = |depth: f64| TexturedPlane {
            depth,
            cell: 0.2,
            angle: 0.0,
            extent: (-0.1, 0.1, -0.1, 0.1),
            dark: 0.3,
            bright: 0.7,
            seed: 0,
        };
        let cam = CameraModel::new(100.0, 100.0, 60.0, 45.0, 121, 91).unwrap();
        let width_at = |depth: f64| {
            let scene = SceneConfig {
                planes: vec![plane(depth)],
                background: 0.5,
            };
            let img = render_intensity(&scene, &Se3::identity(), &cam).unwrap();
            let row: Vec<f64> = (0..cam.width).map(|x| img.at(x, 45)).collect();
            // total deviation from background measures the covered width
            let covered: f64 = row.iter().map(|v| (v - 0.5).abs() / 0.2).sum();
            let center = row.iter().enumerate().fold((0.0, 0.0), |acc, (x, v)| {
                let w = (v - 0.5).abs();
                (acc.0 + w * x as f64, acc.1 + w)
            });
            (covered, center.0 / center.1)
        };
        let (w1, c1) = width_at(1.0);
        let (w2, c2) = width_at(2.0);
        assert_relative_eq!(w1, 20.0, epsilon = 1e-6);
        assert_relative_eq!(w2, 10.0, epsilon = 1e-6);
        assert_relative_eq!(c1, 60.0, epsilon = 1e-9);
        assert_relative_eq!(c2, 60.0, epsilon = 1e-9);
    }

    #[test]
    fn static_camera_emits_nothing() {
        let rig = small_rig();
        let out = simulate_events(
            &SceneConfig::three_planes(1),
            &SimTrajectory::new(Motion::Static, 0.05),
            &rig,
            &SimConfig {
                frame_rate: 200.0,
                ..SimConfig::default()
            },
        )
        .unwrap();
        assert!(out.left.is_empty() && out.right.is_empty());
        assert_eq!(out.trajectory.len(), 11);
    }

    #[test]
    fn edge_sweep_emits_one_event_per_level() {
        // Hand-computed ramp: log intensity goes from ln 0.3 to ln 0.7.
        let mut out = Vec::new();
        let (l0, l1) = (0.3f64.ln(), 0.7f64.ln());
        crossings(l0, l1, 0.0, 1.0, 0.3, 0, 0, &mut out);
        // levels -1.2, -0.9, -0.6 lie in (ln 0.3, ln 0.7] = (-1.204, -0.357]
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|e| e.polarity == Polarity::Positive));
        assert_relative_eq!(out[0].t, (-1.2 - l0) / (l1 - l0), epsilon = 1e-12);
        assert_relative_eq!(out[2].t, (-0.6 - l0) / (l1 - l0), epsilon = 1e-12);
        let mut back = Vec::new();
        crossings(l1, l0, 0.0, 1.0, 0.3, 0, 0, &mut back);
        assert_eq!(back.len(), 3);
        assert!(back.iter().all(|e| e.polarity == Polarity::Negative));
    }

    #[test]
    fn too_fast_motion_is_rejected() {
        let mut traj = SimTrajectory::new(Motion::TranslateX, 0.1);
        traj.speed = 2.0;
        let r = simulate_events(
            &SceneConfig::three_planes(1),
            &traj,
            &small_rig(),
            &SimConfig {
                frame_rate: 100.0,
                ..SimConfig::default()
            },
        );
        assert!(matches!(r, Err(Error::FrameRateTooLow(_))));
    }

    #[test]
    fn streams_are_sorted_and_in_bounds() {
        let rig = small_rig();
        let out = simulate_events(
            &SceneConfig::three_planes(3),
            &SimTrajectory::new(Motion::TranslateY, 0.1),
            &rig,
            &SimConfig {
                frame_rate: 200.0,
                timestamp_jitter: 1e-4,
                ..SimConfig::default()
            },
        )
        .unwrap();
        for stream in [&out.left, &out.right] {
            assert!(!stream.is_empty());
            assert!(stream.windows(2).all(|w| w[0].t <= w[1].t));
            assert!(stream
                .iter()
                .all(|e| (e.x as usize) < rig.left.width && (e.y as usize) < rig.left.height));
        }
    }
}
