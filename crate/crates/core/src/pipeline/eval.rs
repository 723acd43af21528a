use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Se3, TrajectoryDb};
use crate::io::FloatMap;
use crate::mapping::SemiDenseDepthMap;

/// Maximum timestamp gap when pairing estimated and ground-truth poses.
pub const ASSOCIATION_TOLERANCE: f64 = 0.010;

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub ate_rms: f64,
    /// Rotational RPE in degrees per second.
    pub rpe_rot: f64,
    /// Translational RPE in meters per second.
    pub rpe_trans: f64,
    pub rpe_delta: f64,
    /// `(t, estimated position after alignment, ground-truth position)`.
    pub series: Vec<(f64, Vector3<f64>, Vector3<f64>)>,
}

/// Pairs every estimated knot with the ground-truth knot nearest in time.
fn associate(est: &TrajectoryDb, gt: &TrajectoryDb) -> Vec<(f64, Se3, Se3)> {
    est.knots()
        .iter()
        .filter_map(|(t, pose)| {
            let j = gt.nearest(*t)?;
            let (tg, g) = gt.knots()[j];
            ((tg - t).abs() <= ASSOCIATION_TOLERANCE).then_some((*t, *pose, g))
        })
        .collect()
}

/// Least-squares rigid transform `(R, t)` with `dst ~ R * src + t`.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - cd) * (s - cs).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    (r, cd - r * cs)
}

/// RMS position error after rigid alignment of `est` onto `gt`.
pub fn evaluate_ate(est: &TrajectoryDb, gt: &TrajectoryDb) -> Result<f64> {
    Ok(ate_with_series(est, gt)?.0)
}

fn ate_with_series(
    est: &TrajectoryDb,
    gt: &TrajectoryDb,
) -> Result<(f64, Vec<(f64, Vector3<f64>, Vector3<f64>)>)> {
    let pairs = associate(est, gt);
    if pairs.len() < 3 {
        return Err(Error::NoOverlap);
    }
    let src: Vec<_> = pairs.iter().map(|(_, e, _)| e.translation()).collect();
    let dst: Vec<_> = pairs.iter().map(|(_, _, g)| g.translation()).collect();
    let (r, t) = align_rigid(&src, &dst);
    let mut sq = 0.0;
    let mut series = Vec::with_capacity(pairs.len());
    for ((time, _, _), (s, d)) in pairs.iter().zip(src.iter().zip(&dst)) {
        let aligned = r * s + t;
        sq += (aligned - d).norm_squared();
        series.push((*time, aligned, *d));
    }
    Ok(((sq / pairs.len() as f64).sqrt(), series))
}

/// Relative pose error over intervals of `delta` seconds, as RMS
/// `(degrees per second, meters per second)`.
pub fn evaluate_rpe(est: &TrajectoryDb, gt: &TrajectoryDb, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig("RPE interval must be > 0".into()));
    }
    let pairs = associate(est, gt);
    let mut rot_sq = 0.0;
    let mut trans_sq = 0.0;
    let mut count = 0usize;
    for (i, (ti, ei, gi)) in pairs.iter().enumerate() {
        let target = ti + delta;
        let j = i + pairs[i..].partition_point(|(t, _, _)| *t < target);
        let best = [j.checked_sub(1), Some(j)]
            .into_iter()
            .flatten()
            .filter(|&k| k > i && k < pairs.len())
            .min_by(|&a, &b| (pairs[a].0 - target).abs().total_cmp(&(pairs[b].0 - target).abs()));
        let Some(k) = best else { continue };
        let (tk, ek, gk) = &pairs[k];
        if (tk - target).abs() > ASSOCIATION_TOLERANCE {
            continue;
        }
        let dt = tk - ti;
        let rel_gt = gi.inverse() * *gk;
        let rel_est = ei.inverse() * *ek;
        let err = rel_gt.inverse() * rel_est;
        rot_sq += (err.angle().to_degrees() / dt).powi(2);
        trans_sq += (err.translation().norm() / dt).powi(2);
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoValidPairs);
    }
    let n = count as f64;
    Ok(((rot_sq / n).sqrt(), (trans_sq / n).sqrt()))
}

pub fn evaluate(est: &TrajectoryDb, gt: &TrajectoryDb, rpe_delta: f64) -> Result<EvaluationReport> {
    let (ate_rms, series) = ate_with_series(est, gt)?;
    let (rpe_rot, rpe_trans) = evaluate_rpe(est, gt, rpe_delta)?;
    Ok(EvaluationReport {
        ate_rms,
        rpe_rot,
        rpe_trans,
        rpe_delta,
        series,
    })
}

/// Depth accuracy of a semi-dense map against ground-truth inverse depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    /// Mean absolute depth error in meters.
    pub mean: f64,
    pub median: f64,
    /// Standard deviation of the signed depth error in meters.
    pub std_dev: f64,
    /// Mean error divided by the scene depth range.
    pub relative: f64,
    /// Entries compared against ground truth.
    pub count: usize,
}

/// Compares map entries with ground truth at the same pixels. `depth_range` is
/// `max - min` scene depth used to normalize the relative error.
pub fn evaluate_depth_map(
    map: &SemiDenseDepthMap,
    gt: &FloatMap,
    depth_range: f64,
) -> Result<DepthMetrics> {
    let mut signed: Vec<f64> = map
        .iter()
        .filter_map(|((x, y), e)| {
            let rho = gt.at(x, y)?;
            Some(1.0 / e.mean - 1.0 / rho)
        })
        .collect();
    if signed.is_empty() {
        return Err(Error::EmptyMap);
    }
    let n = signed.len() as f64;
    let mean_signed = signed.iter().sum::<f64>() / n;
    let std_dev = (signed.iter().map(|v| (v - mean_signed).powi(2)).sum::<f64>() / n).sqrt();
    for v in signed.iter_mut() {
        *v = v.abs();
    }
    signed.sort_by(f64::total_cmp);
    let mean = signed.iter().sum::<f64>() / n;
    let median = signed[signed.len() / 2];
    Ok(DepthMetrics {
        mean,
        median,
        std_dev,
        relative: mean / depth_range,
        count: signed.len(),
    })
}
