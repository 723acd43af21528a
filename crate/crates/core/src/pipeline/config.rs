use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::parse_key_values;
use crate::mapping::{MapperConfig, PatchConfig, ResidualModel};
use crate::tracking::TrackerConfig;

/// Everything a run needs, loadable from a `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    /// Time-surface decay in seconds.
    pub decay: f64,
    /// Rate at which stereo time surfaces are rendered, in Hz.
    pub surface_rate: f64,
    /// Rate of depth-map refreshes, in Hz.
    pub mapping_rate: f64,
    /// Number of per-observation estimate sets fused into one map.
    pub fusion_window: usize,
    pub mapper: MapperConfig,
    pub tracker: TrackerConfig,
    /// Minimum active pixels on both surfaces before bootstrapping.
    pub bootstrap_min_active: usize,
    /// Inverse-depth scale given to bootstrap estimates.
    pub bootstrap_scale: f64,
    /// Consecutive tracking failures tolerated before re-initializing.
    pub max_tracking_failures: usize,
    /// Entries with a larger standard deviation are left out of tracking.
    pub map_max_std: f64,
    /// Feed ground-truth poses to the mapper instead of tracking.
    pub use_gt_poses: bool,
    /// Worker threads (0 = all cores).
    pub threads: usize,
    pub events_left: Option<PathBuf>,
    pub events_right: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub gt_poses: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            decay: 0.030,
            surface_rate: 100.0,
            mapping_rate: 20.0,
            fusion_window: 20,
            mapper: MapperConfig::default(),
            tracker: TrackerConfig::default(),
            bootstrap_min_active: 500,
            bootstrap_scale: 1.5e-3,
            max_tracking_failures: 10,
            map_max_std: f64::INFINITY,
            use_gt_poses: false,
            threads: 0,
            events_left: None,
            events_right: None,
            calibration: None,
            gt_poses: None,
            output_dir: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0) {
            return Err(Error::InvalidDecay(self.decay));
        }
        if !(self.surface_rate > 0.0) || !(self.mapping_rate > 0.0) {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        if self.fusion_window == 0 {
            return Err(Error::InvalidConfig("fusion window must be at least 1".into()));
        }
        if !(self.bootstrap_scale > 0.0) {
            return Err(Error::InvalidConfig("bootstrap scale must be positive".into()));
        }
        self.mapper.validate()?;
        self.tracker.validate()
    }

    /// Surfaces between two mapping rounds.
    pub fn mapping_stride(&self) -> usize {
        ((self.surface_rate / self.mapping_rate).round() as usize).max(1)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.mapper;
        let tr = &mut self.tracker;
        match key {
            "decay" => self.decay = parse(key, v)?,
            "surface_rate" => self.surface_rate = parse(key, v)?,
            "mapping_rate" => self.mapping_rate = parse(key, v)?,
            "fusion_window" => self.fusion_window = parse(key, v)?,
            "event_budget" => m.event_budget = parse(key, v)?,
            "event_window" => m.event_window = parse(key, v)?,
            "patch_side" => m.patch = PatchConfig::new(parse(key, v)?)?,
            "inv_depth_min" => m.inv_depth_min = parse(key, v)?,
            "inv_depth_max" => m.inv_depth_max = parse(key, v)?,
            "zncc_threshold" => m.zncc_threshold = parse(key, v)?,
            "disparity_min" => m.disparity_min = parse(key, v)?,
            "disparity_max" => m.disparity_max = parse(key, v)?,
            "mapper_iterations" => m.max_iterations = parse(key, v)?,
            "robust" => m.robust = parse_bool(key, v)?,
            "residual_mean" => m.residual_model.mean = parse(key, v)?,
            "residual_scale" => m.residual_model.scale = parse(key, v)?,
            "residual_dof" => m.residual_model.dof = parse(key, v)?,
            "mapper_blur" => m.blur_kernel = parse(key, v)?,
            "mapper_seed" => m.seed = parse(key, v)?,
            "tracker_batch" => tr.batch_size = parse(key, v)?,
            "tracker_iterations" => tr.max_iterations = parse(key, v)?,
            "huber_delta" => tr.huber_delta = parse(key, v)?,
            "lm_lambda" => tr.lm_lambda = parse(key, v)?,
            "tracker_full_batch" => tr.full_batch = parse_bool(key, v)?,
            "tracker_seed" => tr.seed = parse(key, v)?,
            "bootstrap_min_active" => self.bootstrap_min_active = parse(key, v)?,
            "bootstrap_scale" => self.bootstrap_scale = parse(key, v)?,
            "max_tracking_failures" => self.max_tracking_failures = parse(key, v)?,
            "map_max_std" => self.map_max_std = parse(key, v)?,
            "use_gt_poses" => self.use_gt_poses = parse_bool(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "events_left" => self.events_left = Some(v.into()),
            "events_right" => self.events_right = Some(v.into()),
            "calibration" => self.calibration = Some(v.into()),
            "gt_poses" => self.gt_poses = Some(v.into()),
            "output_dir" => self.output_dir = Some(v.into()),
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a config from text. Relative paths are resolved against `base`.
    pub fn from_text(text: &str, path: &Path, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v, _) in parse_key_values(text, path)? {
            cfg.set(&k, &v)?;
        }
        ResidualModel::new(
            cfg.mapper.residual_model.mean,
            cfg.mapper.residual_model.scale,
            cfg.mapper.residual_model.dof,
        )?;
        if let Some(base) = base {
            for p in [
                &mut cfg.events_left,
                &mut cfg.events_right,
                &mut cfg.calibration,
                &mut cfg.gt_poses,
                &mut cfg.output_dir,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path, path.parent())
    }

    /// Serializes every field in the format accepted by [`SystemConfig::load`].
    pub fn to_text(&self) -> String {
        let m = &self.mapper;
        let tr = &self.tracker;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("decay", &self.decay);
        kv("surface_rate", &self.surface_rate);
        kv("mapping_rate", &self.mapping_rate);
        kv("fusion_window", &self.fusion_window);
        kv("event_budget", &m.event_budget);
        kv("event_window", &m.event_window);
        kv("patch_side", &m.patch.side());
        kv("inv_depth_min", &m.inv_depth_min);
        kv("inv_depth_max", &m.inv_depth_max);
        kv("zncc_threshold", &m.zncc_threshold);
        kv("disparity_min", &m.disparity_min);
        kv("disparity_max", &m.disparity_max);
        kv("mapper_iterations", &m.max_iterations);
        kv("robust", &m.robust);
        kv("residual_mean", &m.residual_model.mean);
        kv("residual_scale", &m.residual_model.scale);
        kv("residual_dof", &m.residual_model.dof);
        kv("mapper_blur", &m.blur_kernel);
        kv("mapper_seed", &m.seed);
        kv("tracker_batch", &tr.batch_size);
        kv("tracker_iterations", &tr.max_iterations);
        kv("huber_delta", &tr.huber_delta);
        kv("lm_lambda", &tr.lm_lambda);
        kv("tracker_full_batch", &tr.full_batch);
        kv("tracker_seed", &tr.seed);
        kv("bootstrap_min_active", &self.bootstrap_min_active);
        kv("bootstrap_scale", &self.bootstrap_scale);
        kv("max_tracking_failures", &self.max_tracking_failures);
        kv("map_max_std", &self.map_max_std);
        kv("use_gt_poses", &self.use_gt_poses);
        kv("threads", &self.threads);
        let paths = [
            ("events_left", &self.events_left),
            ("events_right", &self.events_right),
            ("calibration", &self.calibration),
            ("gt_poses", &self.gt_poses),
            ("output_dir", &self.output_dir),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                kv(k, &p.display());
            }
        }
        s
    }
}
