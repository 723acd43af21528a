use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{Se3, StereoRig};
use crate::mapping::{InverseDepthEstimate, MapperConfig, SemiDenseDepthMap, StereoObservation};
use crate::time_surface::TimeSurface;

/// Surface value of a pixel whose last event is exactly one decay constant old.
pub const ACTIVE_LEVEL: f64 = 255.0 / std::f64::consts::E;

/// Pixels that fired within the last decay constant.
pub fn active_pixels(ts: &TimeSurface) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..ts.height() {
        for x in 0..ts.width() {
            if ts.value(x, y) >= ACTIVE_LEVEL {
                out.push((x, y));
            }
        }
    }
    out
}

/// Summed-area table with a zero border row and column.
struct Integral {
    w: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 1;
        let mut data = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(x, y);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Self { w, data }
    }

    /// Sum over the inclusive box `[x0, x1] x [y0, y1]`.
    #[inline]
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.w + 1;
        self.data[(y1 + 1) * s + x1 + 1] - self.data[y0 * s + x1 + 1] - self.data[(y1 + 1) * s + x0]
            + self.data[y0 * s + x0]
    }
}

/// ZNCC scores of every left pixel against the right pixel `d` columns to its
/// left, for all `d` in the range. `scores[d - dmin][y * w + x]` is NaN where
/// either patch leaves the image or is flat.
fn zncc_volume(obs: &StereoObservation, half: usize, (dmin, dmax): (usize, usize)) -> Vec<Vec<f64>> {
    let (w, h) = (obs.left.width(), obs.left.height());
    let l = obs.left.values();
    let r = obs.right.values();
    let il = Integral::new(w, h, |x, y| l[y * w + x]);
    let ill = Integral::new(w, h, |x, y| l[y * w + x].powi(2));
    let ir = Integral::new(w, h, |x, y| r[y * w + x]);
    let irr = Integral::new(w, h, |x, y| r[y * w + x].powi(2));
    let n = ((2 * half + 1) * (2 * half + 1)) as f64;
    let eps = 1e-9 * n;
    (dmin..=dmax)
        .map(|d| {
            let ilr = Integral::new(w, h, |x, y| {
                if x >= d {
                    l[y * w + x] * r[y * w + x - d]
                } else {
                    0.0
                }
            });
            let mut out = vec![f64::NAN; w * h];
            if 2 * half + d >= w || 2 * half >= h {
                return out;
            }
            for y in half..h - half {
                let (y0, y1) = (y - half, y + half);
                for x in half + d..w - half {
                    let (x0, x1) = (x - half, x + half);
                    let sl = il.sum(x0, y0, x1, y1);
                    let sr = ir.sum(x0 - d, y0, x1 - d, y1);
                    let vl = ill.sum(x0, y0, x1, y1) - sl * sl / n;
                    let vr = irr.sum(x0 - d, y0, x1 - d, y1) - sr * sr / n;
                    if vl <= eps || vr <= eps {
                        continue;
                    }
                    let cov = ilr.sum(x0, y0, x1, y1) - sl * sr / n;
                    out[y * w + x] = (cov / (vl.sqrt() * vr.sqrt())).clamp(-1.0, 1.0);
                }
            }
            out
        })
        .collect()
}

/// Coarse initial map from a dense ZNCC disparity sweep over the active left
/// pixels, refined to sub-pixel disparity by a parabola through the best score
/// and its neighbors. Every entry gets the same conservative `scale`.
pub fn bootstrap(
    obs: &StereoObservation,
    rig: &StereoRig,
    config: &MapperConfig,
    min_active: usize,
    scale: f64,
    reference_pose: Se3,
) -> Result<SemiDenseDepthMap> {
    let active = active_pixels(&obs.left);
    let right_active = obs.right.count_at_least(ACTIVE_LEVEL);
    if active.len() < min_active || right_active < min_active {
        return Err(Error::CannotBootstrap {
            active: active.len().min(right_active),
            required: min_active,
        });
    }
    let (dmin, dmax) = (config.disparity_min, config.disparity_max);
    let volume = zncc_volume(obs, config.patch.half(), (dmin, dmax));
    let w = obs.left.width();
    let fb = rig.left.fx * rig.baseline();
    let mut map = SemiDenseDepthMap::new(obs.t, reference_pose, w, obs.left.height());
    for (x, y) in active {
        let i = y * w + x;
        let mut best: Option<(usize, f64)> = None;
        for (k, scores) in volume.iter().enumerate() {
            let s = scores[i];
            if !s.is_nan() && best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        let Some((k, s)) = best else { continue };
        if s < config.zncc_threshold {
            continue;
        }
        let mut d = (dmin + k) as f64;
        if k > 0 && k + 1 < volume.len() {
            let (a, c) = (volume[k - 1][i], volume[k + 1][i]);
            let denom = a - 2.0 * s + c;
            if a.is_finite() && c.is_finite() && denom < 0.0 {
                d += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            }
        }
        let rho = d / fb;
        if !(rho >= config.inv_depth_min && rho <= config.inv_depth_max) {
            continue;
        }
        map.insert(
            x,
            y,
            InverseDepthEstimate {
                mean: rho,
                scale,
                dof: config.residual_model.dof,
                pixel: Vector2::new(x as f64, y as f64),
                t: obs.t,
            },
        );
    }
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    Ok(map)
}
