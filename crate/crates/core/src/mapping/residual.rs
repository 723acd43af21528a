use nalgebra::{Vector2, Vector3};

use super::{PatchConfig, StereoObservation};
use crate::error::{Error, Result};
use crate::geometry::{Se3, StereoRig};
use crate::time_surface::Event;

/// Geometry shared by every inverse-depth hypothesis of one event.
///
/// `obs_from_event` maps the left camera at the event timestamp into the left
/// camera at the observation time.
#[derive(Clone, Copy, Debug)]
pub struct DepthWarp<'a> {
    pub obs: &'a StereoObservation,
    pub rig: &'a StereoRig,
    pub obs_from_event: Se3,
    pub patch: PatchConfig,
}

/// Patch centers in both surfaces and their derivatives with respect to inverse depth.
struct Centers {
    left: Vector2<f64>,
    right: Vector2<f64>,
    d_left: Vector2<f64>,
    d_right: Vector2<f64>,
}

impl DepthWarp<'_> {
    fn centers(&self, pixel: &Vector2<f64>, rho: f64) -> Result<Centers> {
        if rho <= 0.0 {
            return Err(Error::NonPositiveInverseDepth(rho));
        }
        let bearing = self.rig.left.bearing(pixel);
        let rot = self.obs_from_event.rotation();
        let rb: Vector3<f64> = rot * bearing;
        let p_left = rb / rho + self.obs_from_event.translation();
        let dp_left = -rb / (rho * rho);
        let rl = self.rig.right_from_left;
        let p_right = rl.transform_point(&p_left);
        let dp_right = rl.rotation() * dp_left;
        if p_left.z <= 0.0 {
            return Err(Error::BehindCamera(p_left.z));
        }
        if p_right.z <= 0.0 {
            return Err(Error::BehindCamera(p_right.z));
        }
        Ok(Centers {
            left: self.rig.left.project(&p_left)?,
            right: self.rig.right.project(&p_right)?,
            d_left: self.rig.left.projection_jacobian(&p_left) * dp_left,
            d_right: self.rig.right.projection_jacobian(&p_right) * dp_right,
        })
    }
}

/// Visits every patch pixel with a valid residual, passing `(index, r, dr/drho)`.
///
/// Returns the number of valid pixels, or `InsufficientSupport` when fewer than
/// half of the patch could be sampled.
pub fn eval_patch(
    warp: &DepthWarp<'_>,
    pixel: &Vector2<f64>,
    rho: f64,
    mut visit: impl FnMut(usize, f64, f64),
) -> Result<usize> {
    visit_samples(warp, pixel, rho, |i, vl, vr, j| visit(i, vl - vr, j))
}

/// Like [`eval_patch`] but passes both surface values `(index, left, right, dr/drho)`.
pub fn visit_samples(
    warp: &DepthWarp<'_>,
    pixel: &Vector2<f64>,
    rho: f64,
    mut visit: impl FnMut(usize, f64, f64, f64),
) -> Result<usize> {
    let required = warp.patch.len().div_ceil(2);
    let c = match warp.centers(pixel, rho) {
        Ok(c) => c,
        Err(Error::BehindCamera(_)) => {
            return Err(Error::InsufficientSupport { valid: 0, required })
        }
        Err(e) => return Err(e),
    };
    let mut valid = 0;
    for (i, (dx, dy)) in warp.patch.offsets().enumerate() {
        let off = Vector2::new(dx, dy);
        let (Some((vl, gl)), Some((vr, gr))) = (
            warp.obs.left.sample_with_gradient(&(c.left + off)),
            warp.obs.right.sample_with_gradient(&(c.right + off)),
        ) else {
            continue;
        };
        valid += 1;
        visit(i, vl, vr, gl.dot(&c.d_left) - gr.dot(&c.d_right));
    }
    if valid < required {
        return Err(Error::InsufficientSupport { valid, required });
    }
    Ok(valid)
}

/// Signed residuals over the patch with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchResiduals {
    pub residuals: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PatchResiduals {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Euclidean norm of the Jacobian over valid pixels.
    pub fn jacobian_norm(&self) -> f64 {
        self.jacobian
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(j, _)| j * j)
            .sum::<f64>()
            .sqrt()
    }
}

fn collect(warp: &DepthWarp<'_>, pixel: &Vector2<f64>, rho: f64) -> Result<PatchResiduals> {
    let n = warp.patch.len();
    let mut out = PatchResiduals {
        residuals: vec![0.0; n],
        jacobian: vec![0.0; n],
        valid: vec![false; n],
    };
    eval_patch(warp, pixel, rho, |i, r, j| {
        out.residuals[i] = r;
        out.jacobian[i] = j;
        out.valid[i] = true;
    })?;
    Ok(out)
}

/// Temporal residuals `T_left(x1_i) - T_right(x2_i)` for an event at inverse depth `rho`.
pub fn residual_vector(warp: &DepthWarp<'_>, event: &Event, rho: f64) -> Result<PatchResiduals> {
    collect(warp, &event.pixel(), rho)
}

/// Analytic `dr/drho` over the patch; invalid pixels hold 0.
pub fn depth_jacobian(warp: &DepthWarp<'_>, event: &Event, rho: f64) -> Result<Vec<f64>> {
    Ok(collect(warp, &event.pixel(), rho)?.jacobian)
}
