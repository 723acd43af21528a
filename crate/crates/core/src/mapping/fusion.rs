use std::cmp::Ordering;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;

use super::residual::DepthWarp;
use super::solver::estimate_event;
use super::{InverseDepthEstimate, MapperConfig, SemiDenseDepthMap, StereoObservation, StudentT};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Se3, StereoRig, TrajectoryDb};
use crate::time_surface::Event;

/// Student's t posterior approximation for two beliefs over the same quantity.
pub fn filter_update(a: StudentT, b: StudentT) -> Result<StudentT> {
    if !(a.scale > 0.0) || !(b.scale > 0.0) {
        return Err(Error::NonPositiveScale);
    }
    let nu = a.dof.min(b.dof);
    let (sa2, sb2) = (a.scale * a.scale, b.scale * b.scale);
    let sum = sa2 + sb2;
    let mean = (sa2 * b.mean + sb2 * a.mean) / sum;
    let d = a.mean - b.mean;
    let s2 = (nu + d * d / sum) / (nu + 1.0) * (sa2 * sb2 / sum);
    Ok(StudentT::new(mean, s2.sqrt(), nu + 1.0))
}

/// Moves an estimate into another camera frame.
///
/// `target_from_source` maps points from the estimate's camera into the target
/// camera. The scale follows the first-order change of inverse depth.
pub fn propagate_estimate(
    e: &InverseDepthEstimate,
    target_from_source: &Se3,
    cam: &CameraModel,
) -> Result<(Vector2<f64>, InverseDepthEstimate)> {
    let bearing = cam.bearing(&e.pixel);
    let p = target_from_source.transform_point(&(bearing / e.mean));
    if p.z <= 0.0 {
        return Err(Error::BehindCamera(p.z));
    }
    let pixel = cam.project(&p)?;
    if !cam.contains(&pixel) {
        return Err(Error::OutsideImage);
    }
    let rho = 1.0 / p.z;
    let rb_z = (target_from_source.rotation() * bearing).z;
    let gain = (rb_z * rho * rho / (e.mean * e.mean)).abs();
    Ok((
        pixel,
        InverseDepthEstimate {
            mean: rho,
            scale: e.scale * gain,
            pixel,
            ..*e
        },
    ))
}

/// What happened at one of the four pixels touched by a fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuseOutcome {
    Assigned,
    Fused,
    Replaced,
    Kept,
    Skipped,
}

/// Lets `e` (already expressed in the map frame) influence the four pixels
/// around `pixel`.
pub fn fuse_into_map(
    map: &mut SemiDenseDepthMap,
    pixel: &Vector2<f64>,
    e: &InverseDepthEstimate,
) -> Vec<FuseOutcome> {
    let mut outcomes = Vec::with_capacity(4);
    let incoming_var = match e.dist().variance() {
        Ok(v) if e.scale > 0.0 && e.mean.is_finite() => v,
        _ => {
            map.stats.skipped += 1;
            outcomes.push(FuseOutcome::Skipped);
            return outcomes;
        }
    };
    let x0 = pixel.x.floor();
    let y0 = pixel.y.floor();
    for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let (x, y) = (x0 + dx, y0 + dy);
        if x < 0.0 || y < 0.0 || x >= map.width() as f64 || y >= map.height() as f64 {
            continue;
        }
        let (x, y) = (x as usize, y as usize);
        let outcome = match map.get(x, y).copied() {
            None => {
                map.insert(x, y, *e);
                FuseOutcome::Assigned
            }
            Some(b) => {
                let var_b = b.dist().variance().unwrap_or(f64::INFINITY);
                let sigma_b = var_b.sqrt();
                if (e.mean - b.mean).abs() <= 2.0 * sigma_b {
                    match filter_update(e.dist(), b.dist()) {
                        Ok(post) => {
                            map.insert(x, y, b.with_dist(post));
                            FuseOutcome::Fused
                        }
                        Err(_) => FuseOutcome::Skipped,
                    }
                } else if incoming_var < var_b {
                    map.insert(x, y, *e);
                    FuseOutcome::Replaced
                } else {
                    FuseOutcome::Kept
                }
            }
        };
        match outcome {
            FuseOutcome::Assigned => map.stats.assigned += 1,
            FuseOutcome::Fused => map.stats.fused += 1,
            FuseOutcome::Replaced => map.stats.replaced += 1,
            FuseOutcome::Kept => map.stats.kept += 1,
            FuseOutcome::Skipped => map.stats.skipped += 1,
        }
        outcomes.push(outcome);
    }
    outcomes
}

/// Events chosen for estimation against one stereo observation.
#[derive(Clone, Debug)]
pub struct MappingBatch {
    pub obs: Arc<StereoObservation>,
    pub events: Vec<Event>,
}

/// Per-event inverse depths for one batch, each expressed in the left camera at
/// its own event timestamp. Failed events are dropped.
pub fn estimate_batch(
    batch: &MappingBatch,
    traj: &TrajectoryDb,
    rig: &StereoRig,
    config: &MapperConfig,
) -> Result<Vec<InverseDepthEstimate>> {
    let blurred;
    let obs: &StereoObservation = if config.blur_kernel > 1 {
        blurred = batch.obs.blurred(config.blur_kernel)?;
        &blurred
    } else {
        &batch.obs
    };
    let world_from_obs = traj.interpolate(obs.t)?;
    let obs_from_world = world_from_obs.inverse();
    let estimates = batch
        .events
        .par_iter()
        .filter_map(|event| {
            let world_from_event = traj.interpolate(event.t).ok()?;
            let warp = DepthWarp {
                obs,
                rig,
                obs_from_event: obs_from_world * world_from_event,
                patch: config.patch,
            };
            estimate_event(&warp, event, config).ok()
        })
        .map(|s| s.estimate)
        .collect();
    Ok(estimates)
}

fn canonical_order(a: &InverseDepthEstimate, b: &InverseDepthEstimate) -> Ordering {
    a.pixel
        .y
        .total_cmp(&b.pixel.y)
        .then(a.pixel.x.total_cmp(&b.pixel.x))
        .then(a.t.total_cmp(&b.t))
        .then(a.mean.total_cmp(&b.mean))
        .then(a.scale.total_cmp(&b.scale))
        .then(a.dof.total_cmp(&b.dof))
}

/// Propagates every estimate set into the left camera at `target_t` and fuses
/// them set by set. Each set is fused in a canonical order so the result does
/// not depend on how the estimates were produced.
pub fn fuse_estimates(
    sets: &[Vec<InverseDepthEstimate>],
    traj: &TrajectoryDb,
    target_t: f64,
    cam: &CameraModel,
) -> Result<SemiDenseDepthMap> {
    let world_from_target = traj.interpolate(target_t)?;
    let target_from_world = world_from_target.inverse();
    let mut map = SemiDenseDepthMap::new(target_t, world_from_target, cam.width, cam.height);
    for set in sets {
        let mut sorted = set.clone();
        sorted.sort_by(canonical_order);
        for e in &sorted {
            let Ok(world_from_source) = traj.interpolate(e.t) else {
                continue;
            };
            let rel = target_from_world * world_from_source;
            match propagate_estimate(e, &rel, cam) {
                Ok((pixel, moved)) => {
                    fuse_into_map(&mut map, &pixel, &moved);
                }
                Err(_) => map.stats.skipped += 1,
            }
        }
    }
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    Ok(map)
}

/// Estimates depth for every batch and fuses the results at the newest
/// observation, anchored at its pose.
pub fn build_depth_map(
    batches: &[MappingBatch],
    traj: &TrajectoryDb,
    rig: &StereoRig,
    config: &MapperConfig,
) -> Result<SemiDenseDepthMap> {
    let newest = batches
        .iter()
        .map(|b| b.obs.t)
        .max_by(f64::total_cmp)
        .ok_or(Error::EmptyMap)?;
    let sets = batches
        .iter()
        .map(|b| estimate_batch(b, traj, rig, config))
        .collect::<Result<Vec<_>>>()?;
    fuse_estimates(&sets, traj, newest, &rig.left)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn est(mean: f64, scale: f64, dof: f64) -> InverseDepthEstimate {
        InverseDepthEstimate {
            mean,
            scale,
            dof,
            pixel: Vector2::new(10.0, 10.0),
            t: 0.0,
        }
    }

    fn cam() -> CameraModel {
        CameraModel::new(200.0, 200.0, 50.0, 40.0, 100, 80).unwrap()
    }

    #[test]
    fn filter_update_examples() {
        let p = filter_update(StudentT::new(0.0, 1.0, 3.0), StudentT::new(0.0, 1.0, 3.0)).unwrap();
        assert_eq!(p.mean, 0.0);
        assert!((p.scale * p.scale - 0.375).abs() < 1e-12);
        assert_eq!(p.dof, 4.0);
        let p = filter_update(StudentT::new(0.0, 1.0, 3.0), StudentT::new(1.0, 1.0, 3.0)).unwrap();
        assert!((p.mean - 0.5).abs() < 1e-12);
        let p = filter_update(StudentT::new(0.0, 1.0, 5.0), StudentT::new(0.0, 2.0, 7.0)).unwrap();
        assert_eq!(p.dof, 6.0);
        assert!(matches!(
            filter_update(StudentT::new(0.0, 0.0, 3.0), StudentT::new(0.0, 1.0, 3.0)),
            Err(Error::NonPositiveScale)
        ));
    }

    #[test]
    fn propagation_examples() {
        let cam = cam();
        let e = InverseDepthEstimate {
            pixel: Vector2::new(50.0, 40.0),
            ..est(0.5, 0.01, 3.0)
        };
        let (px, same) = propagate_estimate(&e, &Se3::identity(), &cam).unwrap();
        assert_eq!(px, e.pixel);
        assert_relative_eq!(same.mean, 0.5, epsilon = 1e-15);
        assert_relative_eq!(same.scale, 0.01, epsilon = 1e-15);

        // The target camera sits 1 m behind the source: the point moves from 2 m to 3 m.
        let back = Se3::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let (px, moved) = propagate_estimate(&e, &back, &cam).unwrap();
        assert_relative_eq!(moved.mean, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(px, e.pixel, epsilon = 1e-12);
        // drho'/drho = rho'^2 / rho^2
        assert_relative_eq!(moved.scale, 0.01 * (1.0 / 9.0) / 0.25, epsilon = 1e-12);
        assert_eq!(moved.dof, 3.0);

        let behind = Se3::from_translation(Vector3::new(0.0, 0.0, -3.0));
        assert!(matches!(
            propagate_estimate(&e, &behind, &cam),
            Err(Error::BehindCamera(_))
        ));
        let aside = Se3::from_translation(Vector3::new(5.0, 0.0, 0.0));
        assert!(matches!(
            propagate_estimate(&e, &aside, &cam),
            Err(Error::OutsideImage)
        ));
    }

    #[test]
    fn propagated_scale_matches_finite_difference() {
        let cam = cam();
        let t = Se3::from_axis_angle(&Vector3::new(0.3, 1.0, -0.2), 0.1, Vector3::new(0.1, -0.05, 0.3));
        let e = InverseDepthEstimate {
            pixel: Vector2::new(31.0, 55.0),
            ..est(0.8, 0.02, 3.0)
        };
        let h = 1e-7;
        let up = propagate_estimate(&InverseDepthEstimate { mean: 0.8 + h, ..e }, &t, &cam).unwrap();
        let dn = propagate_estimate(&InverseDepthEstimate { mean: 0.8 - h, ..e }, &t, &cam).unwrap();
        let fd = (up.1.mean - dn.1.mean) / (2.0 * h);
        let (_, moved) = propagate_estimate(&e, &t, &cam).unwrap();
        assert_relative_eq!(moved.scale, 0.02 * fd.abs(), max_relative = 1e-6);
    }

    #[test]
    fn fusion_rules() {
        let mut map = SemiDenseDepthMap::new(0.0, Se3::identity(), 100, 80);
        let px = Vector2::new(10.3, 20.6);
        let out = fuse_into_map(&mut map, &px, &est(1.0, 1.0, 4.0));
        assert_eq!(out, vec![FuseOutcome::Assigned; 4]);
        assert_eq!(map.len(), 4);
        for (x, y) in [(10, 20), (11, 20), (10, 21), (11, 21)] {
            assert!(map.get(x, y).is_some());
        }

        // sigma_b = sqrt(2), 1.5 lies inside the 2-sigma gate
        let out = fuse_into_map(&mut map, &px, &est(1.5, 1.0, 4.0));
        assert_eq!(out, vec![FuseOutcome::Fused; 4]);
        let expected =
            filter_update(StudentT::new(1.5, 1.0, 4.0), StudentT::new(1.0, 1.0, 4.0)).unwrap();
        let got = map.get(10, 20).unwrap();
        assert_relative_eq!(got.mean, expected.mean, epsilon = 1e-12);
        assert_relative_eq!(got.scale, expected.scale, epsilon = 1e-12);
        assert_eq!(got.dof, 5.0);

        // incompatible and more uncertain: incumbent stays
        let before = *map.get(10, 20).unwrap();
        let far = before.mean + 3.0 * before.std_dev().unwrap();
        let out = fuse_into_map(&mut map, &px, &est(far, 5.0, 4.0));
        assert_eq!(out, vec![FuseOutcome::Kept; 4]);
        assert_eq!(*map.get(10, 20).unwrap(), before);

        // incompatible and sharper: replaced
        let out = fuse_into_map(&mut map, &px, &est(far, 0.01, 4.0));
        assert_eq!(out, vec![FuseOutcome::Replaced; 4]);
        assert_eq!(map.get(10, 20).unwrap().mean, far);

        // undefined variance is never stored
        let out = fuse_into_map(&mut map, &Vector2::new(50.0, 50.0), &est(1.0, 1.0, 2.0));
        assert_eq!(out, vec![FuseOutcome::Skipped]);
        assert!(map.get(50, 50).is_none());
    }

    #[test]
    fn equal_variance_conflict_keeps_incumbent() {
        let mut map = SemiDenseDepthMap::new(0.0, Se3::identity(), 100, 80);
        let px = Vector2::new(5.0, 5.0);
        fuse_into_map(&mut map, &px, &est(1.0, 0.1, 4.0));
        let out = fuse_into_map(&mut map, &px, &est(3.0, 0.1, 4.0));
        assert_eq!(out, vec![FuseOutcome::Kept; 4]);
        assert_eq!(map.get(5, 5).unwrap().mean, 1.0);
    }

    #[test]
    fn border_neighbors_are_skipped() {
        let mut map = SemiDenseDepthMap::new(0.0, Se3::identity(), 100, 80);
        let out = fuse_into_map(&mut map, &Vector2::new(99.0, 79.0), &est(1.0, 1.0, 4.0));
        assert_eq!(out, vec![FuseOutcome::Assigned]);
    }

    #[test]
    fn empty_batches_give_empty_map() {
        let traj = TrajectoryDb::from_knots(vec![(0.0, Se3::identity())]).unwrap();
        let rig = StereoRig::rectified(cam(), cam(), 0.1).unwrap();
        assert!(matches!(
            build_depth_map(&[], &traj, &rig, &MapperConfig::default()),
            Err(Error::EmptyMap)
        ));
        assert!(matches!(
            fuse_estimates(&[vec![]], &traj, 0.0, &rig.left),
            Err(Error::EmptyMap)
        ));
    }

    #[test]
    fn fusion_is_order_invariant() {
        let traj = TrajectoryDb::from_knots(vec![
            (0.0, Se3::identity()),
            (1.0, Se3::from_translation(Vector3::new(0.1, 0.0, 0.0))),
        ])
        .unwrap();
        let set: Vec<InverseDepthEstimate> = (0..200)
            .map(|i| InverseDepthEstimate {
                mean: 0.5 + 0.01 * ((i * 7) % 13) as f64,
                scale: 0.01 + 0.001 * (i % 5) as f64,
                dof: 3.0,
                pixel: Vector2::new(20.0 + (i % 9) as f64, 30.0 + (i % 4) as f64),
                t: 0.5,
            })
            .collect();
        let mut reversed = set.clone();
        reversed.reverse();
        let a = fuse_estimates(&[set], &traj, 1.0, &cam()).unwrap();
        let b = fuse_estimates(&[reversed], &traj, 1.0, &cam()).unwrap();
        let ea: Vec<_> = a.iter().map(|(p, e)| (p, *e)).collect();
        let eb: Vec<_> = b.iter().map(|(p, e)| (p, *e)).collect();
        assert_eq!(ea, eb);
    }

    proptest! {
        #[test]
        fn filter_update_properties(
            ma in -5.0..5.0f64, mb in -5.0..5.0f64,
            sa in 0.01..3.0f64, sb in 0.01..3.0f64,
            na in 2.1..30.0f64, nb in 2.1..30.0f64,
        ) {
            let p = filter_update(StudentT::new(ma, sa, na), StudentT::new(mb, sb, nb)).unwrap();
            prop_assert_eq!(p.dof, na.min(nb) + 1.0);
            prop_assert!(p.mean >= ma.min(mb) - 1e-12 && p.mean <= ma.max(mb) + 1e-12);
            prop_assert!(p.scale > 0.0);
        }

        #[test]
        fn equal_beliefs_shrink(m in -5.0..5.0f64, s in 0.01..3.0f64, nu in 2.1..30.0f64) {
            let p = filter_update(StudentT::new(m, s, nu), StudentT::new(m, s, nu)).unwrap();
            let expected = nu / (nu + 1.0) * s * s / 2.0;
            prop_assert!((p.scale * p.scale - expected).abs() <= 1e-12 * expected.max(1.0));
            prop_assert!(p.scale < s);
        }

        #[test]
        fn fusion_never_stores_invalid(
            entries in proptest::collection::vec(
                (0.0..20.0f64, 0.0..20.0f64, 0.2..3.0f64, -0.5..1.0f64, 1.5..6.0f64), 1..60)
        ) {
            let mut map = SemiDenseDepthMap::new(0.0, Se3::identity(), 20, 20);
            for (x, y, m, s, nu) in entries {
                fuse_into_map(&mut map, &Vector2::new(x, y), &est(m, s, nu));
            }
            for (_, e) in map.iter() {
                prop_assert!(e.dof > 2.0 && e.scale > 0.0);
            }
        }
    }
}
