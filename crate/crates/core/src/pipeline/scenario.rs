use nalgebra::Vector2;

use crate::error::Result;
use crate::geometry::{Se3, StereoRig};
use crate::io::FloatMap;
use crate::mapping::{InverseDepthEstimate, SemiDenseDepthMap, StereoObservation};
use crate::simulator::{
    default_rig, ground_truth_inverse_depth, ground_truth_map, simulate_events, Motion,
    SceneConfig, SimConfig, SimOutput, SimTrajectory,
};
use crate::time_surface::{Event, LastEventMap};

/// A simulated three-plane sequence together with its ground truth.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub scene: SceneConfig,
    pub rig: StereoRig,
    pub trajectory: SimTrajectory,
    pub data: SimOutput,
}

impl Scenario {
    /// Default scene and rig; `frame_rate` is the renderer rate in Hz.
    pub fn simulate(motion: Motion, duration: f64, frame_rate: f64, seed: u64) -> Result<Self> {
        let config = SimConfig {
            frame_rate,
            seed,
            ..SimConfig::default()
        };
        Self::simulate_with(SimTrajectory::new(motion, duration), &config)
    }

    /// Default scene (textures seeded by `config.seed`) and rig.
    pub fn simulate_with(trajectory: SimTrajectory, config: &SimConfig) -> Result<Self> {
        let scene = SceneConfig::three_planes(config.seed);
        let rig = default_rig();
        let data = simulate_events(&scene, &trajectory, &rig, config)?;
        Ok(Self {
            scene,
            rig,
            trajectory,
            data,
        })
    }

    pub fn gt_pose(&self, t: f64) -> Se3 {
        self.trajectory.pose(t)
    }

    /// Stereo time surfaces from all events up to `t`.
    pub fn observation_at(&self, t: f64, decay: f64) -> Result<StereoObservation> {
        let render = |events: &[Event]| -> Result<_> {
            let n = events.partition_point(|e| e.t <= t);
            let mut map = LastEventMap::new(self.rig.left.width, self.rig.left.height);
            map.ingest(&events[..n])?;
            map.render(t, decay)
        };
        StereoObservation::new(render(&self.data.left)?, render(&self.data.right)?)
    }

    /// The newest `count` left events at or before `t`.
    pub fn recent_left_events(&self, t: f64, count: usize) -> Vec<Event> {
        let n = self.data.left.partition_point(|e| e.t <= t);
        self.data.left[n.saturating_sub(count)..n].to_vec()
    }

    pub fn gt_inverse_depth(&self, t: f64) -> FloatMap {
        ground_truth_map(&self.scene, &self.gt_pose(t), &self.rig.left, t)
    }

    pub fn gt_inverse_depth_at(&self, t: f64, pixel: &Vector2<f64>) -> Option<f64> {
        ground_truth_inverse_depth(&self.scene, &self.gt_pose(t), &self.rig.left, pixel)
    }

    /// Scene depth span used to normalize relative errors.
    pub fn depth_range(&self) -> f64 {
        let (lo, hi) = self.scene.depth_range();
        hi - lo
    }

    /// Exact-depth map at the left pixels of `obs` whose surface value is at
    /// least `min_value`, anchored at the ground-truth pose of time `t`.
    pub fn gt_reference_map(
        &self,
        obs: &StereoObservation,
        t: f64,
        min_value: f64,
        scale: f64,
        dof: f64,
    ) -> Result<SemiDenseDepthMap> {
        let cam = &self.rig.left;
        let pose = self.gt_pose(t);
        let mut map = SemiDenseDepthMap::new(t, pose, cam.width, cam.height);
        for y in 0..cam.height {
            for x in 0..cam.width {
                if obs.left.value(x, y) < min_value {
                    continue;
                }
                let px = Vector2::new(x as f64, y as f64);
                if let Some(rho) = ground_truth_inverse_depth(&self.scene, &pose, cam, &px) {
                    map.insert(
                        x,
                        y,
                        InverseDepthEstimate {
                            mean: rho,
                            scale,
                            dof,
                            pixel: px,
                            t,
                        },
                    );
                }
            }
        }
        if map.is_empty() {
            return Err(crate::error::Error::EmptyMap);
        }
        Ok(map)
    }
}
