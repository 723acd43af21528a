//! Pinhole cameras, rigid transforms, the Cayley rotation parametrization and
//! time-indexed pose storage.
//!
//! Poses stored in a [`TrajectoryDb`] are camera-to-world (`T_world_cam`).
//! Camera frames follow the usual vision convention: x right, y down, z forward.

use std::ops::Mul;

use nalgebra::{
    Isometry3, Matrix3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3,
    Vector6,
};

use crate::error::{Error, Result};

/// Intrinsics of an undistorted, rectified pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if p.z <= 0.0 {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(Vector2::new(
            self.cx + self.fx * p.x / p.z,
            self.cy + self.fy * p.y / p.z,
        ))
    }

    pub fn back_project(&self, x: &Vector2<f64>, inv_depth: f64) -> Result<Vector3<f64>> {
        if inv_depth <= 0.0 {
            return Err(Error::NonPositiveInverseDepth(inv_depth));
        }
        Ok(self.bearing(x) / inv_depth)
    }

    /// Ray through pixel `x` scaled to unit depth.
    pub fn bearing(&self, x: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((x.x - self.cx) / self.fx, (x.y - self.cy) / self.fy, 1.0)
    }

    /// Derivative of the projection with respect to the camera-frame point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        nalgebra::Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    /// True when `x` lies in the closed pixel rectangle `[0, w-1] x [0, h-1]`.
    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        x.x >= 0.0
            && x.y >= 0.0
            && x.x <= (self.width - 1) as f64
            && x.y <= (self.height - 1) as f64
    }
}

/// Rigid-body transform. Backed by a unit quaternion so that values read back
/// from text files are bit-identical to what was written.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se3(Isometry3<f64>);

impl Se3 {
    pub fn identity() -> Self {
        Self(Isometry3::identity())
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self(Isometry3::from_parts(Translation3::from(translation), rotation))
    }

    /// Builds a transform from a rotation matrix; the matrix is assumed orthonormal.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::from_parts(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(UnitQuaternion::identity(), t)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self::from_parts(UnitQuaternion::from_axis_angle(&axis, angle), translation)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.0.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.0.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0.rotation * p + self.0.translation.vector
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.0.rotation.angle()
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.0
    }

    /// Decoupled interpolation: linear in translation, slerp in rotation.
    pub fn interpolate(&self, other: &Se3, alpha: f64) -> Se3 {
        let t = self.translation() * (1.0 - alpha) + other.translation() * alpha;
        let q = self
            .0
            .rotation
            .try_slerp(&other.0.rotation, alpha, 1e-12)
            .unwrap_or(self.0.rotation);
        Se3::from_parts(q, t)
    }
}

impl Default for Se3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Se3 {
    type Output = Se3;
    fn mul(self, rhs: Se3) -> Se3 {
        let mut iso = self.0 * rhs.0;
        iso.rotation = UnitQuaternion::new_normalize(iso.rotation.into_inner());
        Se3(iso)
    }
}

impl Mul<&Se3> for &Se3 {
    type Output = Se3;
    fn mul(self, rhs: &Se3) -> Se3 {
        *self * *rhs
    }
}

/// Six-vector of incremental motion: Cayley rotation parameters and translation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MotionParams {
    pub c: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl MotionParams {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            c: Vector3::new(v[0], v[1], v[2]),
            t: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.c.x, self.c.y, self.c.z, self.t.x, self.t.y, self.t.z)
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().chain(self.t.iter()).all(|v| v.is_finite())
    }
}

/// `R = (I + [c]x)(I - [c]x)^-1`, evaluated through the equivalent quaternion `(1, c)`.
pub fn se3_from_cayley(theta: &MotionParams) -> Se3 {
    let q = Quaternion::new(1.0, theta.c.x, theta.c.y, theta.c.z);
    Se3::from_parts(UnitQuaternion::from_quaternion(q), theta.t)
}

const CAYLEY_SINGULAR_TOL: f64 = 1e-6;

pub fn cayley_from_se3(pose: &Se3) -> Result<MotionParams> {
    let q = pose.rotation().into_inner();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let angle = 2.0 * w.min(1.0).acos();
    if angle >= std::f64::consts::PI - CAYLEY_SINGULAR_TOL {
        return Err(Error::CayleySingularity(angle));
    }
    Ok(MotionParams {
        c: v / w,
        t: pose.translation(),
    })
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A calibrated, rectified stereo pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
    /// Maps left-camera coordinates into right-camera coordinates.
    pub right_from_left: Se3,
}

impl StereoRig {
    /// Rectified rig: identical orientation, right camera displaced by `baseline` along +x.
    pub fn rectified(left: CameraModel, right: CameraModel, baseline: f64) -> Result<Self> {
        if baseline <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        Ok(Self {
            left,
            right,
            right_from_left: Se3::from_translation(Vector3::new(-baseline, 0.0, 0.0)),
        })
    }

    pub fn baseline(&self) -> f64 {
        self.right_from_left.translation().norm()
    }
}

/// Time-indexed camera-to-world poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryDb {
    knots: Vec<(f64, Se3)>,
}

impl TrajectoryDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_knots(knots: Vec<(f64, Se3)>) -> Result<Self> {
        let mut db = Self::new();
        for (t, pose) in knots {
            db.push(t, pose)?;
        }
        Ok(db)
    }

    pub fn push(&mut self, t: f64, pose: Se3) -> Result<()> {
        if let Some(&(prev, _)) = self.knots.last() {
            if t <= prev {
                return Err(Error::NonIncreasingTimestamp { prev, next: t });
            }
        }
        self.knots.push((t, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn knots(&self) -> &[(f64, Se3)] {
        &self.knots
    }

    pub fn first(&self) -> Option<&(f64, Se3)> {
        self.knots.first()
    }

    pub fn last(&self) -> Option<&(f64, Se3)> {
        self.knots.last()
    }

    /// Pose at `t`; clamps to the end poses outside the covered span.
    pub fn interpolate(&self, t: f64) -> Result<Se3> {
        let (first, last) = match (self.knots.first(), self.knots.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::NoPoses),
        };
        if t <= first.0 {
            return Ok(first.1);
        }
        if t >= last.0 {
            return Ok(last.1);
        }
        let hi = self.knots.partition_point(|(kt, _)| *kt <= t);
        let (t0, p0) = &self.knots[hi - 1];
        if *t0 == t {
            return Ok(*p0);
        }
        let (t1, p1) = &self.knots[hi];
        let alpha = (t - t0) / (t1 - t0);
        Ok(p0.interpolate(p1, alpha))
    }

    /// Index of the knot whose timestamp is closest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.knots.is_empty() {
            return None;
        }
        let hi = self.knots.partition_point(|(kt, _)| *kt < t);
        let candidates = [hi.checked_sub(1), (hi < self.knots.len()).then_some(hi)];
        candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                let da = (self.knots[a].0 - t).abs();
                let db = (self.knots[b].0 - t).abs();
                da.total_cmp(&db)
            })
    }

    /// Total path length of the translation component.
    pub fn path_length(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }

    /// Path length through poses sampled every `interval` seconds, plus the
    /// final pose. Short-period jitter does not accumulate at this scale.
    pub fn path_length_sampled(&self, interval: f64) -> Result<f64> {
        let (Some(&(t0, _)), Some(&(t1, _))) = (self.knots.first(), self.knots.last()) else {
            return Err(Error::NoPoses);
        };
        if !(interval > 0.0) {
            return Err(Error::InvalidConfig("sampling interval must be > 0".into()));
        }
        let mut prev = self.interpolate(t0)?.translation();
        let mut length = 0.0;
        let mut k = 1usize;
        loop {
            let t = (t0 + k as f64 * interval).min(t1);
            let p = self.interpolate(t)?.translation();
            length += (p - prev).norm();
            prev = p;
            if t >= t1 {
                return Ok(length);
            }
            k += 1;
        }
    }
}
