use nalgebra::Vector2;

use super::{PatchConfig, StereoObservation};
use crate::error::{Error, Result};
use crate::geometry::StereoRig;
use crate::time_surface::TimeSurface;

/// Zero-normalized cross-correlation of two equally sized patches.
pub fn zncc(a: &[f64], b: &[f64]) -> Result<f64> {
    assert_eq!(a.len(), b.len(), "patch sizes differ");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= f64::EPSILON * n || sbb <= f64::EPSILON * n {
        return Err(Error::DegeneratePatch);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Result of the epipolar disparity sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisparityMatch {
    pub disparity: usize,
    pub score: f64,
    pub inverse_depth: f64,
}

/// Copies the patch centered at integer pixel `(cx, cy)`, if it fits in the surface.
pub(crate) fn extract_patch(
    ts: &TimeSurface,
    cx: isize,
    cy: isize,
    half: isize,
    out: &mut Vec<f64>,
) -> bool {
    out.clear();
    let (w, h) = (ts.width() as isize, ts.height() as isize);
    if cx - half < 0 || cy - half < 0 || cx + half >= w || cy + half >= h {
        return false;
    }
    for y in cy - half..=cy + half {
        for x in cx - half..=cx + half {
            out.push(ts.value(x as usize, y as usize));
        }
    }
    true
}

/// Block matching along the horizontal epipolar line of a rectified pair.
///
/// Right patches are centered at `(x - d, y)` for every integer `d` in
/// `disparity_range`; the best ZNCC score wins if it reaches `threshold`.
pub fn init_inverse_depth(
    event_pixel: &Vector2<f64>,
    obs: &StereoObservation,
    rig: &StereoRig,
    disparity_range: (usize, usize),
    patch: &PatchConfig,
    threshold: f64,
) -> Result<DisparityMatch> {
    let half = patch.half() as isize;
    let cx = event_pixel.x.round() as isize;
    let cy = event_pixel.y.round() as isize;
    let mut left = Vec::with_capacity(patch.len());
    if !extract_patch(&obs.left, cx, cy, half, &mut left) {
        return Err(Error::PatchOutOfBounds);
    }
    // Left statistics are shared by every candidate.
    let n = left.len() as f64;
    let ml = left.iter().sum::<f64>() / n;
    for v in left.iter_mut() {
        *v -= ml;
    }
    let sll: f64 = left.iter().map(|v| v * v).sum();
    if sll <= f64::EPSILON * n {
        return Err(Error::NoMatch);
    }

    let mut right = Vec::with_capacity(patch.len());
    let mut best: Option<(usize, f64)> = None;
    for d in disparity_range.0..=disparity_range.1 {
        if !extract_patch(&obs.right, cx - d as isize, cy, half, &mut right) {
            continue;
        }
        let mr = right.iter().sum::<f64>() / n;
        let (mut slr, mut srr) = (0.0, 0.0);
        for (l, r) in left.iter().zip(&right) {
            let dr = r - mr;
            slr += l * dr;
            srr += dr * dr;
        }
        if srr <= f64::EPSILON * n {
            continue;
        }
        let score = slr / (sll.sqrt() * srr.sqrt());
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((d, score));
        }
    }
    match best {
        Some((d, score)) if score >= threshold => Ok(DisparityMatch {
            disparity: d,
            score,
            inverse_depth: d as f64 / (rig.left.fx * rig.baseline()),
        }),
        _ => Err(Error::NoMatch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraModel;
    use approx::assert_relative_eq;

    #[test]
    fn zncc_examples() {
        let a = [1.0, 4.0, 2.0, 8.0, 5.0];
        assert_relative_eq!(zncc(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let mean = a.iter().sum::<f64>() / 5.0;
        let neg: Vec<f64> = a.iter().map(|v| 2.0 * mean - v).collect();
        assert_relative_eq!(zncc(&a, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert!(matches!(
            zncc(&[3.0; 5], &a),
            Err(Error::DegeneratePatch)
        ));
        // invariant to gain and offset
        let scaled: Vec<f64> = a.iter().map(|v| 3.0 * v + 7.0).collect();
        assert_relative_eq!(zncc(&a, &scaled).unwrap(), 1.0, epsilon = 1e-12);
    }

    fn pattern(x: usize, y: usize) -> f64 {
        let h = (x.wrapping_mul(2654435761) ^ y.wrapping_mul(40503)) % 251;
        h as f64
    }

    fn rig() -> StereoRig {
        let cam = CameraModel::new(200.0, 200.0, 60.0, 40.0, 120, 80).unwrap();
        StereoRig::rectified(cam, cam, 0.1).unwrap()
    }

    #[test]
    fn recovers_constructed_shift() {
        let (w, h) = (120, 80);
        let left = TimeSurface::from_fn(0.0, 0.03, w, h, pattern);
        // right(x) = left(x + 5): a left pixel at x appears at x - 5 on the right
        let right = TimeSurface::from_fn(0.0, 0.03, w, h, |x, y| pattern(x + 5, y));
        let obs = StereoObservation::new(left, right).unwrap();
        let patch = PatchConfig::new(9).unwrap();
        let rig = rig();
        let px = Vector2::new(60.0, 40.0);
        let m = init_inverse_depth(&px, &obs, &rig, (0, 20), &patch, 0.7).unwrap();

        // Exhaustive oracle: score every disparity independently.
        let mut lp = Vec::new();
        extract_patch(&obs.left, 60, 40, 4, &mut lp);
        let oracle = (0..=20usize)
            .map(|d| {
                let mut rp = Vec::new();
                extract_patch(&obs.right, 60 - d as isize, 40, 4, &mut rp);
                (d, zncc(&lp, &rp).unwrap())
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(oracle.0, 5);
        assert_eq!(m.disparity, 5);
        assert_relative_eq!(m.score, 1.0, epsilon = 1e-9);
        assert_relative_eq!(m.inverse_depth, 5.0 / (200.0 * 0.1), epsilon = 1e-12);
    }

    #[test]
    fn constant_left_patch_has_no_match() {
        let left = TimeSurface::from_fn(0.0, 0.03, 120, 80, |_, _| 0.0);
        let right = TimeSurface::from_fn(0.0, 0.03, 120, 80, pattern);
        let obs = StereoObservation::new(left, right).unwrap();
        let r = init_inverse_depth(
            &Vector2::new(60.0, 40.0),
            &obs,
            &rig(),
            (0, 20),
            &PatchConfig::new(9).unwrap(),
            0.7,
        );
        assert!(matches!(r, Err(Error::NoMatch)));
    }

    #[test]
    fn border_patch_is_out_of_bounds() {
        let ts = TimeSurface::from_fn(0.0, 0.03, 120, 80, pattern);
        let obs = StereoObservation::new(ts.clone(), ts).unwrap();
        let r = init_inverse_depth(
            &Vector2::new(2.0, 40.0),
            &obs,
            &rig(),
            (0, 20),
            &PatchConfig::new(9).unwrap(),
            0.7,
        );
        assert!(matches!(r, Err(Error::PatchOutOfBounds)));
    }
}
