//! End-to-end orchestration, evaluation and simulated scenarios.

mod bootstrap;
mod config;
mod eval;
mod scenario;
mod vo;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;

use crate::error::{Error, Result};
use crate::geometry::{MotionParams, Se3};
use crate::io;
use crate::mapping::{estimate_inverse_depth, init_inverse_depth, DepthWarp, SemiDenseDepthMap};
use crate::simulator::Motion;
use crate::tracking::{track, TrackingProblem};

pub use bootstrap::{active_pixels, bootstrap, ACTIVE_LEVEL};
pub use config::SystemConfig;
pub use eval::{
    align_rigid, evaluate, evaluate_ate, evaluate_depth_map, evaluate_rpe, DepthMetrics,
    EvaluationReport, ASSOCIATION_TOLERANCE,
};
pub use scenario::Scenario;
pub use vo::{run_vo, VoObserver, VoOutput, HISTORY_CAPACITY};

/// Writes the fused map of every `every`-th mapping round.
struct MapWriter {
    dir: PathBuf,
    every: usize,
    round: usize,
}

impl VoObserver for MapWriter {
    fn on_map(&mut self, map: &SemiDenseDepthMap) -> Result<()> {
        self.round += 1;
        if self.round.is_multiple_of(self.every) {
            io::write_depth_map(&self.dir, &format!("map_{:05}", self.round), map)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output: VoOutput,
    pub trajectory_path: PathBuf,
    pub cloud_path: PathBuf,
    pub report: Option<EvaluationReport>,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("`{key}` is not set")))
}

/// Runs the system on the files named in `config` and writes the trajectory,
/// the point cloud and one depth map per fusion window into `output_dir`.
pub fn run_from_config(config: &SystemConfig) -> Result<RunSummary> {
    let left = io::read_events(required(&config.events_left, "events_left")?)?;
    let right = io::read_events(required(&config.events_right, "events_right")?)?;
    let rig = io::read_calibration(required(&config.calibration, "calibration")?)?;
    let out_dir = required(&config.output_dir, "output_dir")?;
    let gt = config
        .gt_poses
        .as_deref()
        .map(io::read_trajectory)
        .transpose()?;
    let maps_dir = out_dir.join("maps");
    std::fs::create_dir_all(&maps_dir)?;
    let mut writer = MapWriter {
        dir: maps_dir,
        every: config.fusion_window,
        round: 0,
    };
    info!("{} left and {} right events", left.len(), right.len());
    let output = run_vo(&left, &right, &rig, config, gt.as_ref(), &mut writer)?;
    let trajectory_path = out_dir.join("trajectory.txt");
    let cloud_path = out_dir.join("cloud.ply");
    io::write_trajectory(&trajectory_path, &output.trajectory)?;
    io::write_ply(&cloud_path, &output.points)?;
    let report = match &gt {
        Some(gt) if !config.use_gt_poses => Some(evaluate(&output.trajectory, gt, 1.0)?),
        _ => None,
    };
    Ok(RunSummary {
        output,
        trajectory_path,
        cloud_path,
        report,
    })
}

/// Timings of the two inner loops.
#[derive(Clone, Debug)]
pub struct BenchReport {
    pub refinements: usize,
    pub refine_time: Duration,
    pub track_points: usize,
    pub track_iterations: usize,
    pub track_time: Duration,
}

/// Times depth refinements and one tracking solve on a short simulated sequence.
pub fn bench(refinements: usize) -> Result<BenchReport> {
    let scenario = Scenario::simulate(Motion::TranslateX, 0.25, 200.0, 3)?;
    let config = SystemConfig::default();
    let t = 0.2;
    let obs = scenario.observation_at(t, config.decay)?;
    let rig = scenario.rig;

    // Seeds for the refinements come from block matching, outside the timed loop.
    let mapper = &config.mapper;
    let warp = DepthWarp {
        obs: &obs,
        rig: &rig,
        obs_from_event: Se3::identity(),
        patch: mapper.patch,
    };
    let events: Vec<_> = scenario
        .recent_left_events(t, 20_000)
        .into_iter()
        .rev()
        .filter_map(|e| {
            let m = init_inverse_depth(
                &e.pixel(),
                &obs,
                &rig,
                (mapper.disparity_min, mapper.disparity_max),
                &mapper.patch,
                mapper.zncc_threshold,
            )
            .ok()?;
            let world_from_event = scenario.gt_pose(e.t);
            let obs_from_event = scenario.gt_pose(t).inverse() * world_from_event;
            Some((e, m.inverse_depth, obs_from_event))
        })
        .take(refinements)
        .collect();
    if events.is_empty() {
        return Err(Error::EmptyMap);
    }
    let start = Instant::now();
    let mut done = 0;
    for (e, rho0, obs_from_event) in &events {
        let w = DepthWarp {
            obs_from_event: *obs_from_event,
            ..warp
        };
        let _ = estimate_inverse_depth(&w, e, *rho0, mapper);
        done += 1;
    }
    let refine_time = start.elapsed();

    let reference = scenario.gt_reference_map(&obs, t, ACTIVE_LEVEL, 0.01, 3.0)?;
    let target = scenario.observation_at(t + 0.05, config.decay)?;
    // Constant-position prediction, as in the running system.
    let theta0 = MotionParams::zero();
    let problem = TrackingProblem::new(&reference, &target.left, rig.left, theta0)?;
    let start = Instant::now();
    let result = track(&problem, &config.tracker)?;
    let track_time = start.elapsed();
    Ok(BenchReport {
        refinements: done,
        refine_time,
        track_points: config.tracker.batch_size.min(problem.support_len()),
        track_iterations: result.iterations,
        track_time,
    })
}
