use nalgebra::Vector2;
use rand::seq::index;
use rand::Rng;

use super::residual::{eval_patch, visit_samples, DepthWarp};
use super::zncc::init_inverse_depth;
use super::{InverseDepthEstimate, MapperConfig};
use crate::error::{Error, Result};
use crate::time_surface::Event;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthSolution {
    pub estimate: InverseDepthEstimate,
    pub initial: f64,
    pub iterations: usize,
}

/// Gauss-Newton (or Student's t IRLS when `config.robust`) refinement of an
/// event's inverse depth starting from `rho0`.
///
/// Stops once `|drho| < 1e-6 * max(rho, rho_min)` or after
/// `config.max_iterations` steps, then attaches the propagated uncertainty.
pub fn estimate_inverse_depth(
    warp: &DepthWarp<'_>,
    event: &Event,
    rho0: f64,
    config: &MapperConfig,
) -> Result<DepthSolution> {
    let (lo, hi) = (config.inv_depth_min, config.inv_depth_max);
    let model = config.residual_model;
    let pixel = event.pixel();
    let initial = rho0.clamp(lo, hi);
    let mut rho = initial;
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        iterations += 1;
        let (mut jtwj, mut jtwr) = (0.0, 0.0);
        eval_patch(warp, &pixel, rho, |_, r, j| {
            let w = if config.robust { model.weight(r) } else { 1.0 };
            jtwj += w * j * j;
            jtwr += w * j * r;
        })?;
        if !(jtwj > 0.0) {
            return Err(Error::UnobservableDepth);
        }
        let step = -jtwr / jtwj;
        rho += step;
        if !rho.is_finite() || rho < lo || rho > hi {
            return Err(Error::Diverged);
        }
        if step.abs() < 1e-6 * rho.max(lo) {
            break;
        }
    }

    let mut norm2 = 0.0;
    eval_patch(warp, &pixel, rho, |_, _, j| norm2 += j * j)?;
    if !(norm2 > 0.0) {
        return Err(Error::UnobservableDepth);
    }
    let scale = model.scale / norm2.sqrt();
    Ok(DepthSolution {
        estimate: InverseDepthEstimate {
            mean: rho,
            scale,
            dof: model.dof,
            pixel,
            t: event.t,
        },
        initial,
        iterations,
    })
}

/// Block-matching initialization followed by refinement.
pub fn estimate_event(
    warp: &DepthWarp<'_>,
    event: &Event,
    config: &MapperConfig,
) -> Result<DepthSolution> {
    let m = init_inverse_depth(
        &event.pixel(),
        warp.obs,
        warp.rig,
        (config.disparity_min, config.disparity_max),
        &warp.patch,
        config.zncc_threshold,
    )?;
    estimate_inverse_depth(warp, event, m.inverse_depth, config)
}

/// Draws `budget` events uniformly without replacement from the newest `window`
/// events of `recent`, returned in stream order.
pub fn select_events<R: Rng + ?Sized>(
    recent: &[Event],
    budget: usize,
    window: usize,
    rng: &mut R,
) -> Vec<Event> {
    let pool = &recent[recent.len().saturating_sub(window)..];
    if pool.len() <= budget {
        return pool.to_vec();
    }
    let mut picked = index::sample(rng, pool.len(), budget).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

/// Temporal residuals of the patch around `pixel` evaluated at a known inverse
/// depth, appended to `out`.
///
/// Only samples where at least one of the two surfaces reaches `min_value` are
/// kept. Both surfaces decay towards zero away from recent edges, and those
/// near-zero pairs say nothing about temporal consistency.
pub fn harvest_residuals(
    warp: &DepthWarp<'_>,
    pixel: &Vector2<f64>,
    rho: f64,
    min_value: f64,
    out: &mut Vec<f64>,
) -> Result<usize> {
    let before = out.len();
    visit_samples(warp, pixel, rho, |_, vl, vr, _| {
        if vl.max(vr) >= min_value {
            out.push(vl - vr);
        }
    })?;
    Ok(out.len() - before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Se3, StereoRig};
    use crate::mapping::{PatchConfig, StereoObservation};
    use crate::time_surface::{Polarity, TimeSurface};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(x: f64) -> f64 {
        // incommensurate frequencies keep the block matching unambiguous
        127.0 + 60.0 * (0.31 * x).sin() + 50.0 * (0.173 * x + 1.0).sin()
    }

    /// Left and right surfaces of a fronto-parallel scene at inverse depth `rho`.
    fn scene(rho: f64) -> (StereoRig, StereoObservation) {
        let cam = CameraModel::new(200.0, 200.0, 80.0, 50.0, 160, 100).unwrap();
        let rig = StereoRig::rectified(cam, cam, 0.1).unwrap();
        let disparity = 200.0 * 0.1 * rho;
        let left = TimeSurface::from_fn(0.5, 0.03, 160, 100, |x, y| {
            profile(x as f64 + 0.37 * y as f64)
        });
        let right = TimeSurface::from_fn(0.5, 0.03, 160, 100, |x, y| {
            profile(x as f64 + disparity + 0.37 * y as f64)
        });
        (rig, StereoObservation::new(left, right).unwrap())
    }

    fn config() -> MapperConfig {
        MapperConfig {
            patch: PatchConfig::new(11).unwrap(),
            ..MapperConfig::default()
        }
    }

    #[test]
    fn converges_to_scene_depth() {
        let rho_gt = 0.45;
        let (rig, obs) = scene(rho_gt);
        let cfg = config();
        let warp = DepthWarp {
            obs: &obs,
            rig: &rig,
            obs_from_event: Se3::identity(),
            patch: cfg.patch,
        };
        let e = Event::new(0.5, 70, 45, Polarity::Positive);
        let sol = estimate_event(&warp, &e, &cfg).unwrap();
        assert!((sol.estimate.mean - rho_gt).abs() < 2e-3, "{:?}", sol);
        assert!(sol.estimate.scale > 0.0);
        assert_eq!(sol.estimate.dof, cfg.residual_model.dof);

        // Restarting at the solution is a fixed point.
        let again = estimate_inverse_depth(&warp, &e, sol.estimate.mean, &cfg).unwrap();
        assert_eq!(again.iterations, 1);
        assert!((again.estimate.mean - sol.estimate.mean).abs() < 1e-6 * sol.estimate.mean);
    }

    #[test]
    fn uniform_surfaces_are_unobservable() {
        let cam = CameraModel::new(200.0, 200.0, 80.0, 50.0, 160, 100).unwrap();
        let rig = StereoRig::rectified(cam, cam, 0.1).unwrap();
        let flat = TimeSurface::from_fn(0.5, 0.03, 160, 100, |_, _| 120.0);
        let obs = StereoObservation::new(flat.clone(), flat).unwrap();
        let cfg = config();
        let warp = DepthWarp {
            obs: &obs,
            rig: &rig,
            obs_from_event: Se3::identity(),
            patch: cfg.patch,
        };
        let e = Event::new(0.5, 70, 45, Polarity::Positive);
        assert!(matches!(
            estimate_inverse_depth(&warp, &e, 0.5, &cfg),
            Err(Error::UnobservableDepth)
        ));
    }

    #[test]
    fn selection_draws_from_recent_window() {
        let events: Vec<Event> = (0..500)
            .map(|i| Event::new(i as f64, 0, 0, Polarity::Positive))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picked = select_events(&events, 50, 100, &mut rng);
        assert_eq!(picked.len(), 50);
        assert!(picked.iter().all(|e| e.t >= 400.0));
        assert!(picked.windows(2).all(|w| w[0].t < w[1].t));
        let all = select_events(&events[..30], 50, 100, &mut rng);
        assert_eq!(all.len(), 30);
    }
}
