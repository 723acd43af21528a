//! Camera tracking by 3D-2D registration of the reference depth map against the
//! negative of the current left time surface.

use nalgebra::{Matrix1x6, Matrix2x3, Matrix3x6, Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{cayley_from_se3, se3_from_cayley, skew, CameraModel, MotionParams, Se3};
use crate::mapping::SemiDenseDepthMap;
use crate::time_surface::TimeSurface;

/// Smoothing applied to the time-surface negative before registration.
pub const TARGET_BLUR_KERNEL: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Points sampled per iteration.
    pub batch_size: usize,
    pub max_iterations: usize,
    pub huber_delta: f64,
    pub lm_lambda: f64,
    /// Use every support point each iteration instead of a random batch.
    pub full_batch: bool,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            batch_size: 300,
            max_iterations: 5,
            huber_delta: 10.0,
            lm_lambda: 1e-3,
            full_batch: false,
            seed: 1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 6 {
            return Err(Error::InvalidConfig(format!(
                "tracker batch size {} is below the 6 degrees of freedom",
                self.batch_size
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("tracker needs at least one iteration".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::InvalidHuberThreshold(self.huber_delta));
        }
        if !(self.lm_lambda >= 0.0) {
            return Err(Error::InvalidConfig("LM damping must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reference points and the target surface for one registration.
#[derive(Clone, Debug)]
pub struct TrackingProblem {
    /// Reference-frame 3D points of the map support.
    points: Vec<Vector3<f64>>,
    /// Blurred negative of the current left time surface.
    target: TimeSurface,
    cam: CameraModel,
    /// Camera-to-world pose of the reference frame.
    reference_pose: Se3,
    pub theta0: MotionParams,
}

impl TrackingProblem {
    /// Builds the problem from a reference map and the raw left surface, which is
    /// negated and blurred here.
    pub fn new(
        map: &SemiDenseDepthMap,
        left: &TimeSurface,
        cam: CameraModel,
        theta0: MotionParams,
    ) -> Result<Self> {
        let target = left.negative().blur(TARGET_BLUR_KERNEL)?;
        Self::from_target(map, target, cam, theta0)
    }

    /// Uses `target` as given: it must already be the blurred negative.
    pub fn from_target(
        map: &SemiDenseDepthMap,
        target: TimeSurface,
        cam: CameraModel,
        theta0: MotionParams,
    ) -> Result<Self> {
        let points: Vec<Vector3<f64>> = map
            .iter()
            .filter_map(|(_, e)| cam.back_project(&e.pixel, e.mean).ok())
            .collect();
        if points.is_empty() {
            return Err(Error::EmptyMap);
        }
        Ok(Self {
            points,
            target,
            cam,
            reference_pose: map.reference_pose,
            theta0,
        })
    }

    pub fn support_len(&self) -> usize {
        self.points.len()
    }

    pub fn target(&self) -> &TimeSurface {
        &self.target
    }

    /// Camera-to-world pose corresponding to motion parameters `theta`.
    pub fn pose_of(&self, theta: &MotionParams) -> Se3 {
        self.reference_pose * se3_from_cayley(theta).inverse()
    }
}

/// `pi(G(theta) * pi^-1(x, rho))`.
pub fn warp_point(
    x: &Vector2<f64>,
    rho: f64,
    theta: &MotionParams,
    cam: &CameraModel,
) -> Result<Vector2<f64>> {
    let p = cam.back_project(x, rho).map_err(|_| Error::WarpInvalid)?;
    let q = se3_from_cayley(theta).transform_point(&p);
    let u = cam.project(&q).map_err(|_| Error::WarpInvalid)?;
    if !cam.contains(&u) {
        return Err(Error::WarpInvalid);
    }
    Ok(u)
}

/// Residuals and their Jacobian with respect to a further increment, for a batch
/// of support points.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingResiduals {
    pub residuals: Vec<f64>,
    pub jacobian: Vec<Matrix1x6<f64>>,
    pub valid: Vec<bool>,
}

impl TrackingResiduals {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Evaluates the target negative at `pi(G(theta) G(dtheta) P)` for each point
/// in `batch`.
///
/// The Jacobian is taken with respect to one more increment composed on the
/// right and linearized at zero, so at `dtheta = 0` it is the derivative with
/// respect to `dtheta` itself.
pub fn tracking_residuals(
    problem: &TrackingProblem,
    theta: &MotionParams,
    dtheta: &MotionParams,
    batch: &[usize],
) -> Result<TrackingResiduals> {
    if batch.is_empty() {
        return Err(Error::InsufficientSupport { valid: 0, required: 6 });
    }
    let composed = se3_from_cayley(theta) * se3_from_cayley(dtheta);
    let rot = composed.rotation_matrix();
    let mut out = TrackingResiduals {
        residuals: vec![0.0; batch.len()],
        jacobian: vec![Matrix1x6::zeros(); batch.len()],
        valid: vec![false; batch.len()],
    };
    for (k, &i) in batch.iter().enumerate() {
        let p = problem.points[i];
        let q = rot * p + composed.translation();
        if q.z <= 0.0 {
            continue;
        }
        let Ok(u) = problem.cam.project(&q) else {
            continue;
        };
        let Some((value, grad)) = problem.target.sample_with_gradient(&u) else {
            continue;
        };
        let mut dp = Matrix3x6::zeros();
        dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-2.0 * skew(&p)));
        dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
        let dproj: Matrix2x3<f64> = problem.cam.projection_jacobian(&q);
        out.residuals[k] = value;
        out.jacobian[k] = grad.transpose() * dproj * rot * dp;
        out.valid[k] = true;
    }
    let valid = out.valid_count();
    if valid < 6 {
        return Err(Error::InsufficientSupport { valid, required: 6 });
    }
    Ok(out)
}

pub fn huber_weight(r: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidHuberThreshold(delta));
    }
    let a = r.abs();
    Ok(if a <= delta { 1.0 } else { delta / a })
}

fn huber_cost(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Damping increases tried within one iteration before giving up on it.
const MAX_DAMPING_TRIALS: usize = 10;

/// Largest value of the negative, charged to points that leave the image.
const OUTSIDE_RESIDUAL: f64 = 255.0;

fn batch_cost(res: &TrackingResiduals, delta: f64) -> f64 {
    res.residuals
        .iter()
        .zip(&res.valid)
        .map(|(&r, &v)| huber_cost(if v { r } else { OUTSIDE_RESIDUAL }, delta))
        .sum::<f64>()
        / res.residuals.len() as f64
}

/// Mean Huber cost over every support point at `theta`.
pub fn objective(problem: &TrackingProblem, theta: &MotionParams, delta: f64) -> Result<f64> {
    let all: Vec<usize> = (0..problem.points.len()).collect();
    let res = tracking_residuals(problem, theta, &MotionParams::zero(), &all)?;
    Ok(batch_cost(&res, delta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingResult {
    /// Camera-to-world pose of the left camera at the target time.
    pub pose: Se3,
    pub theta: MotionParams,
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt with Huber reweighting over random point batches.
pub fn track(problem: &TrackingProblem, config: &TrackerConfig) -> Result<TrackingResult> {
    config.validate()?;
    let n = problem.points.len();
    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = problem.theta0;
    let mut lambda = config.lm_lambda;
    let mut cost = f64::NAN;
    let mut iterations = 0;
    let zero = MotionParams::zero();

    for _ in 0..config.max_iterations {
        iterations += 1;
        let batch = if config.full_batch || n <= config.batch_size {
            all.clone()
        } else {
            index::sample(&mut rng, n, config.batch_size).into_vec()
        };
        let res = tracking_residuals(problem, &theta, &zero, &batch)?;
        cost = batch_cost(&res, config.huber_delta);
        if !cost.is_finite() {
            return Err(Error::Diverged);
        }

        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        let mut informative = 0;
        for ((r, j), &v) in res.residuals.iter().zip(&res.jacobian).zip(&res.valid) {
            if !v || j.iter().all(|&x| x == 0.0) {
                continue;
            }
            informative += 1;
            let w = huber_weight(*r, config.huber_delta)?;
            h += w * j.transpose() * j;
            g += w * j.transpose() * *r;
        }
        if informative < 6 {
            return Err(Error::InsufficientSupport {
                valid: informative,
                required: 6,
            });
        }

        // One iteration re-solves with growing damping until the batch cost drops.
        let mut improved = false;
        for _ in 0..MAX_DAMPING_TRIALS {
            let mut damped = h;
            let floor = 1e-9 * h.diagonal().max().max(1e-12);
            for k in 0..6 {
                damped[(k, k)] += lambda * h[(k, k)].max(floor);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda = (lambda * 10.0).max(1e-6);
                continue;
            };
            let dtheta = MotionParams::from_vector(&step);
            let candidate =
                cayley_from_se3(&(se3_from_cayley(&theta) * se3_from_cayley(&dtheta)))?;
            let trial = match tracking_residuals(problem, &candidate, &zero, &batch) {
                Ok(t) => batch_cost(&t, config.huber_delta),
                Err(Error::InsufficientSupport { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if trial < cost {
                theta = candidate;
                cost = trial;
                lambda /= 10.0;
                improved = step.norm() >= 1e-8;
                break;
            }
            lambda = (lambda * 10.0).max(1e-6);
        }
        if !improved && (config.full_batch || n <= config.batch_size) {
            break;
        }
    }
    if !theta.is_finite() {
        return Err(Error::Diverged);
    }
    Ok(TrackingResult {
        pose: problem.pose_of(&theta),
        theta,
        cost,
        iterations,
    })
}
