use std::collections::VecDeque;
use std::sync::Arc;

use log::{debug, info, warn};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bootstrap::bootstrap;
use super::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{cayley_from_se3, Se3, StereoRig, TrajectoryDb};
use crate::mapping::{
    estimate_batch, fuse_estimates, select_events, InverseDepthEstimate, MappingBatch,
    SemiDenseDepthMap, StereoObservation,
};
use crate::time_surface::{Event, LastEventMap, SnapshotHistory};
use crate::tracking::{track, TrackerConfig, TrackingProblem};

/// Stereo observations kept for inspection by observers.
pub const HISTORY_CAPACITY: usize = 100;

#[derive(Clone, Debug, Default)]
pub struct VoOutput {
    /// Left camera-to-world poses, one per rendered observation after start-up.
    pub trajectory: TrajectoryDb,
    /// World points from one fused map per fusion window.
    pub points: Vec<Vector3<f64>>,
    pub mapping_rounds: usize,
    pub tracking_failures: usize,
    pub reinitializations: usize,
    pub last_map: Option<SemiDenseDepthMap>,
}

/// Hooks called while the system runs.
pub trait VoObserver {
    /// A freshly fused depth map.
    fn on_map(&mut self, _map: &SemiDenseDepthMap) -> Result<()> {
        Ok(())
    }
}

impl VoObserver for () {}

/// Keeps only the tracking-quality subset of a map.
fn tracking_map(map: &SemiDenseDepthMap, max_std: f64) -> SemiDenseDepthMap {
    let mut m = map.clone();
    if max_std.is_finite() {
        m.prune_uncertain(max_std);
    }
    m
}

/// Feeds both event streams through the tracking and mapping loop.
///
/// With `config.use_gt_poses` the poses come from `gt` and tracking is skipped.
pub fn run_vo(
    left: &[Event],
    right: &[Event],
    rig: &StereoRig,
    config: &SystemConfig,
    gt: Option<&TrajectoryDb>,
    observer: &mut dyn VoObserver,
) -> Result<VoOutput> {
    config.validate()?;
    let gt = match (config.use_gt_poses, gt) {
        (true, Some(g)) => Some(g),
        (true, None) => {
            return Err(Error::InvalidConfig(
                "ground-truth pose mode needs a trajectory".into(),
            ))
        }
        (false, _) => None,
    };
    let (Some(first_l), Some(first_r)) = (left.first(), right.first()) else {
        return Err(Error::CannotBootstrap {
            active: 0,
            required: config.bootstrap_min_active,
        });
    };
    let t_first = first_l.t.min(first_r.t);
    let t_end = left.last().unwrap().t.max(right.last().unwrap().t);
    let period = 1.0 / config.surface_rate;
    let stride = config.mapping_stride();
    let cam = rig.left;

    let mut left_map = LastEventMap::new(cam.width, cam.height);
    let mut right_map = LastEventMap::new(rig.right.width, rig.right.height);
    let history: SnapshotHistory<StereoObservation> = SnapshotHistory::new(HISTORY_CAPACITY);
    let (mut il, mut ir) = (0usize, 0usize);
    let mut rng = ChaCha8Rng::seed_from_u64(config.mapper.seed);
    let mut window: VecDeque<Vec<InverseDepthEstimate>> = VecDeque::new();
    let mut out = VoOutput::default();
    let mut reference: Option<SemiDenseDepthMap> = None;
    let mut initialized = false;
    let mut consecutive_failures = 0usize;
    let mut since_init = 0usize;
    let min_support = config.tracker.batch_size.max(6);

    let mut k = 1usize;
    loop {
        let t = t_first + k as f64 * period;
        if t > t_end + 1e-12 {
            break;
        }
        k += 1;
        let nl = il + left[il..].partition_point(|e| e.t <= t);
        let nr = ir + right[ir..].partition_point(|e| e.t <= t);
        left_map.ingest(&left[il..nl])?;
        right_map.ingest(&right[ir..nr])?;
        (il, ir) = (nl, nr);
        let obs = history.push(StereoObservation::new(
            left_map.render(t, config.decay)?,
            right_map.render(t, config.decay)?,
        )?);

        if let Some(gt) = gt {
            out.trajectory.push(t, gt.interpolate(t)?)?;
            initialized = true;
        } else if !initialized {
            // Surfaces only reach steady state once a full decay constant of
            // events has been integrated.
            if t - t_first < config.decay {
                continue;
            }
            let anchor = out.trajectory.last().map_or(Se3::identity(), |(_, p)| *p);
            match bootstrap(
                &obs,
                rig,
                &config.mapper,
                config.bootstrap_min_active,
                config.bootstrap_scale,
                anchor,
            ) {
                Ok(map) => {
                    info!("bootstrapped at t={t:.3} with {} points", map.len());
                    out.trajectory.push(t, anchor)?;
                    reference = Some(tracking_map(&map, config.map_max_std));
                    initialized = true;
                    consecutive_failures = 0;
                    since_init = 0;
                    window.clear();
                }
                Err(e @ (Error::CannotBootstrap { .. } | Error::EmptyMap)) => {
                    debug!("t={t:.3}: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            }
        } else {
            let (_, prev) = *out.trajectory.last().expect("initialized implies a pose");
            let pose = match &reference {
                Some(map) => {
                    let tracker = TrackerConfig {
                        seed: config.tracker.seed.wrapping_add(k as u64),
                        ..config.tracker.clone()
                    };
                    cayley_from_se3(&(prev.inverse() * map.reference_pose))
                        .and_then(|theta0| TrackingProblem::new(map, &obs.left, cam, theta0))
                        .and_then(|p| track(&p, &tracker))
                        .map(|r| r.pose)
                }
                None => Err(Error::EmptyMap),
            };
            match pose {
                Ok(p) => {
                    consecutive_failures = 0;
                    out.trajectory.push(t, p)?;
                }
                Err(e) => {
                    consecutive_failures += 1;
                    out.tracking_failures += 1;
                    out.trajectory.push(t, prev)?;
                    if consecutive_failures > config.max_tracking_failures {
                        warn!("t={t:.3}: tracking lost ({e}), re-initializing");
                        out.reinitializations += 1;
                        initialized = false;
                        reference = None;
                        continue;
                    }
                }
            }
        }

        since_init += 1;
        if !initialized || !since_init.is_multiple_of(stride) {
            continue;
        }
        let events = select_events(
            &left[..il],
            config.mapper.event_budget,
            config.mapper.event_window,
            &mut rng,
        );
        let batch = MappingBatch {
            obs: Arc::clone(&obs),
            events,
        };
        window.push_back(estimate_batch(&batch, &out.trajectory, rig, &config.mapper)?);
        while window.len() > config.fusion_window {
            window.pop_front();
        }
        let map = match fuse_estimates(window.make_contiguous(), &out.trajectory, t, &cam) {
            Ok(m) => m,
            Err(Error::EmptyMap) => continue,
            Err(e) => return Err(e),
        };
        out.mapping_rounds += 1;
        observer.on_map(&map)?;
        if out.mapping_rounds % config.fusion_window == 0 {
            out.points.extend(tracking_map(&map, config.map_max_std).points_world(&cam));
        }
        let pruned = tracking_map(&map, config.map_max_std);
        if pruned.len() >= min_support {
            reference = Some(pruned);
        }
        out.last_map = Some(map);
    }
    if out.trajectory.is_empty() {
        return Err(Error::CannotBootstrap {
            active: 0,
            required: config.bootstrap_min_active,
        });
    }
    Ok(out)
}
