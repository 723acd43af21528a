//! Semi-dense inverse depth from stereo time surfaces.
//!
//! Each selected event gets an inverse depth by minimizing the temporal
//! residual between the left and right surfaces of one stereo observation.
//! Estimates carry Student's t uncertainty and are propagated to a common
//! time and fused into a [`SemiDenseDepthMap`].

mod fusion;
mod model;
mod residual;
mod solver;
mod zncc;

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::Se3;
use crate::time_surface::TimeSurface;

pub use fusion::{
    build_depth_map, estimate_batch, filter_update, fuse_estimates, fuse_into_map, propagate_estimate,
    FuseOutcome, MappingBatch,
};
pub use model::{
    estimate_uncertainty, fit_gaussian, fit_residual_model, gaussian_nll, variance_of,
    GaussianFit, StudentT,
};
pub use residual::{
    depth_jacobian, eval_patch, residual_vector, visit_samples, DepthWarp, PatchResiduals,
};
pub use solver::{
    estimate_event, estimate_inverse_depth, harvest_residuals, select_events, DepthSolution,
};
pub use zncc::{init_inverse_depth, zncc, DisparityMatch};

/// A pair of time surfaces rendered at the same instant.
#[derive(Clone, Debug)]
pub struct StereoObservation {
    pub t: f64,
    pub left: TimeSurface,
    pub right: TimeSurface,
}

impl StereoObservation {
    pub fn new(left: TimeSurface, right: TimeSurface) -> Result<Self> {
        if left.timestamp() != right.timestamp() {
            return Err(Error::InvalidConfig(format!(
                "stereo surfaces at different times ({} vs {})",
                left.timestamp(),
                right.timestamp()
            )));
        }
        if left.width() != right.width() || left.height() != right.height() {
            return Err(Error::InvalidConfig(
                "stereo surfaces differ in resolution".into(),
            ));
        }
        Ok(Self {
            t: left.timestamp(),
            left,
            right,
        })
    }

    pub fn blurred(&self, kernel_size: usize) -> Result<Self> {
        Ok(Self {
            t: self.t,
            left: self.left.blur(kernel_size)?,
            right: self.right.blur(kernel_size)?,
        })
    }
}

/// Square patch of odd side length used for both residuals and block matching.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    side: usize,
}

impl PatchConfig {
    pub fn new(side: usize) -> Result<Self> {
        if side < 3 || side.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "patch side must be odd and >= 3, got {side}"
            )));
        }
        Ok(Self { side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn half(&self) -> usize {
        self.side / 2
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major offsets relative to the patch center.
    pub fn offsets(&self) -> impl Iterator<Item = (f64, f64)> {
        let h = self.half() as isize;
        (-h..=h).flat_map(move |dy| (-h..=h).map(move |dx| (dx as f64, dy as f64)))
    }
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { side: 25 }
    }
}

/// Student's t model of the temporal residual, in surface units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualModel {
    pub mean: f64,
    pub scale: f64,
    pub dof: f64,
}

impl ResidualModel {
    pub fn new(mean: f64, scale: f64, dof: f64) -> Result<Self> {
        if !(scale > 0.0) || !(dof > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "residual model needs scale > 0 and dof > 1 (got s={scale}, nu={dof})"
            )));
        }
        Ok(Self { mean, scale, dof })
    }

    /// IRLS weight `(nu + 1) / (nu + ((r - mu) / s)^2)`.
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        let z = (r - self.mean) / self.scale;
        (self.dof + 1.0) / (self.dof + z * z)
    }

    pub fn std_dev(&self) -> Option<f64> {
        (self.dof > 2.0).then(|| self.scale * (self.dof / (self.dof - 2.0)).sqrt())
    }
}

impl Default for ResidualModel {
    fn default() -> Self {
        Self {
            mean: 0.0,
            scale: 10.122,
            dof: 2.207,
        }
    }
}

/// Student's t belief over the inverse depth seen at a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseDepthEstimate {
    pub mean: f64,
    pub scale: f64,
    pub dof: f64,
    pub pixel: Vector2<f64>,
    pub t: f64,
}

impl InverseDepthEstimate {
    pub fn dist(&self) -> StudentT {
        StudentT {
            mean: self.mean,
            scale: self.scale,
            dof: self.dof,
        }
    }

    pub fn with_dist(mut self, d: StudentT) -> Self {
        self.mean = d.mean;
        self.scale = d.scale;
        self.dof = d.dof;
        self
    }

    pub fn std_dev(&self) -> Option<f64> {
        variance_of(self).ok().map(f64::sqrt)
    }
}

/// Counters describing what the fusion rules did while a map was built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub assigned: usize,
    pub fused: usize,
    pub replaced: usize,
    pub kept: usize,
    pub skipped: usize,
}

/// Per-pixel inverse depth beliefs anchored at a reference pose and time.
#[derive(Clone, Debug)]
pub struct SemiDenseDepthMap {
    pub t: f64,
    /// Camera-to-world pose of the left camera at `t`.
    pub reference_pose: Se3,
    width: usize,
    height: usize,
    entries: BTreeMap<usize, InverseDepthEstimate>,
    pub stats: FusionStats,
}

impl SemiDenseDepthMap {
    pub fn new(t: f64, reference_pose: Se3, width: usize, height: usize) -> Self {
        Self {
            t,
            reference_pose,
            width,
            height,
            entries: BTreeMap::new(),
            stats: FusionStats::default(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&InverseDepthEstimate> {
        if x >= self.width || y >= self.height {
            return None;
        }
        self.entries.get(&(y * self.width + x))
    }

    /// Stores `e` at integer pixel `(x, y)`, re-anchoring it to the map time.
    pub fn insert(&mut self, x: usize, y: usize, e: InverseDepthEstimate) {
        assert!(x < self.width && y < self.height, "pixel outside map");
        let e = InverseDepthEstimate {
            pixel: Vector2::new(x as f64, y as f64),
            t: self.t,
            ..e
        };
        self.entries.insert(y * self.width + x, e);
    }

    pub fn remove(&mut self, x: usize, y: usize) -> Option<InverseDepthEstimate> {
        self.entries.remove(&(y * self.width + x))
    }

    /// Entries in row-major order as `((x, y), estimate)`.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &InverseDepthEstimate)> {
        let w = self.width;
        self.entries.iter().map(move |(&i, e)| ((i % w, i / w), e))
    }

    /// World-frame points at the mean depth of every entry.
    pub fn points_world(&self, cam: &crate::geometry::CameraModel) -> Vec<nalgebra::Vector3<f64>> {
        self.iter()
            .filter_map(|(_, e)| cam.back_project(&e.pixel, e.mean).ok())
            .map(|p| self.reference_pose.transform_point(&p))
            .collect()
    }

    /// Keeps only entries whose standard deviation is at most `max_std`.
    pub fn prune_uncertain(&mut self, max_std: f64) {
        self.entries
            .retain(|_, e| e.std_dev().is_some_and(|s| s <= max_std));
    }
}

/// Settings for per-event estimation and fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    pub patch: PatchConfig,
    pub inv_depth_min: f64,
    pub inv_depth_max: f64,
    pub zncc_threshold: f64,
    pub disparity_min: usize,
    pub disparity_max: usize,
    pub max_iterations: usize,
    /// Student's t IRLS when true, plain least squares otherwise.
    pub robust: bool,
    pub residual_model: ResidualModel,
    /// Events estimated per mapping round.
    pub event_budget: usize,
    /// Size of the recent-event pool the budget is drawn from.
    pub event_window: usize,
    /// Gaussian kernel applied to both surfaces before estimation (1 = none).
    pub blur_kernel: usize,
    pub seed: u64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            inv_depth_min: 1.0 / 10.0,
            inv_depth_max: 1.0 / 0.3,
            zncc_threshold: 0.7,
            disparity_min: 0,
            disparity_max: 60,
            max_iterations: 10,
            robust: true,
            residual_model: ResidualModel::default(),
            event_budget: 1000,
            event_window: 10_000,
            blur_kernel: 1,
            seed: 7,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inv_depth_min > 0.0 && self.inv_depth_max > self.inv_depth_min) {
            return Err(Error::InvalidConfig(format!(
                "inverse depth interval [{}, {}] is invalid",
                self.inv_depth_min, self.inv_depth_max
            )));
        }
        if self.disparity_max < self.disparity_min {
            return Err(Error::InvalidConfig("disparity range is empty".into()));
        }
        if self.max_iterations == 0 || self.event_budget == 0 || self.event_window == 0 {
            return Err(Error::InvalidConfig(
                "iterations, event budget and window must be positive".into(),
            ));
        }
        if self.blur_kernel == 0 || self.blur_kernel.is_multiple_of(2) {
            return Err(Error::InvalidKernel(self.blur_kernel));
        }
        Ok(())
    }
}
