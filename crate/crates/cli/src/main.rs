use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use esvo_core::io;
use esvo_core::pipeline::{
    self, evaluate, run_from_config, EvaluationReport, RunSummary, SystemConfig,
};
use esvo_core::simulator::{
    default_rig, simulate_events, Motion, SceneConfig, SimConfig, SimTrajectory,
};
use esvo_core::Error;

/// Stereo event-camera visual odometry.
#[derive(Parser, Debug)]
#[command(name = "esvo", version)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run tracking and mapping on the event files named in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mapping only, with poses taken from a ground-truth trajectory.
    Map {
        #[arg(long)]
        gt_poses: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a simulated stereo event sequence with ground truth.
    Sim(SimArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// RPE interval in seconds.
        #[arg(long, default_value_t = 1.0)]
        rpe_delta: f64,
        /// Write aligned per-pose positions here.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Time depth refinements and one tracking solve.
    Bench {
        #[arg(long, default_value_t = 500)]
        refinements: usize,
    },
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long, default_value = "three-planes")]
    scene: String,
    /// static, translate-x, translate-y, translate-z, rotate-z or general.
    #[arg(long)]
    motion: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Linear speed in m/s.
    #[arg(long, default_value_t = 0.3)]
    speed: f64,
    /// Angular speed in rad/s.
    #[arg(long, default_value_t = 0.3)]
    angular_speed: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Renderer rate in Hz.
    #[arg(long, default_value_t = 1000.0)]
    frame_rate: f64,
    /// Standard deviation of timestamp noise in seconds.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Background events per pixel per second.
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    /// Use 1 ms jitter and 1 Hz background noise.
    #[arg(long)]
    realistic: bool,
    /// Seconds between ground-truth depth maps (0 disables them).
    #[arg(long, default_value_t = 0.1)]
    depth_interval: f64,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}

fn set_threads(n: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot configure thread pool: {e}")))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let threads = cli.threads;
    match cli.command {
        Command::Run { config } => {
            let cfg = SystemConfig::load(&config)?;
            set_threads(threads.unwrap_or(cfg.threads))?;
            report_run(&run_from_config(&cfg)?);
        }
        Command::Map { gt_poses, config } => {
            let mut cfg = SystemConfig::load(&config)?;
            cfg.use_gt_poses = true;
            cfg.gt_poses = Some(gt_poses);
            set_threads(threads.unwrap_or(cfg.threads))?;
            report_run(&run_from_config(&cfg)?);
        }
        Command::Sim(args) => {
            set_threads(threads.unwrap_or(0))?;
            simulate(&args)?;
        }
        Command::Eval {
            est,
            gt,
            rpe_delta,
            series,
        } => {
            let est = io::read_trajectory(&est)?;
            let gt = io::read_trajectory(&gt)?;
            let report = evaluate(&est, &gt, rpe_delta)?;
            println!("ATE RMS          {:.4} m", report.ate_rms);
            println!(
                "RPE RMS (d={:.2}s) {:.4} deg/s  {:.4} m/s",
                report.rpe_delta, report.rpe_rot, report.rpe_trans
            );
            println!(
                "path length      {:.4} m (ground truth {:.4} m)",
                est.path_length_sampled(rpe_delta)?,
                gt.path_length_sampled(rpe_delta)?
            );
            if let Some(path) = series {
                write_series(&path, &report)?;
            }
        }
        Command::Bench { refinements } => {
            set_threads(threads.unwrap_or(1))?;
            let b = pipeline::bench(refinements)?;
            println!(
                "mapping   {} depth refinements in {:.1} ms",
                b.refinements,
                b.refine_time.as_secs_f64() * 1e3
            );
            println!(
                "tracking  {} points x {} iterations in {:.2} ms",
                b.track_points,
                b.track_iterations,
                b.track_time.as_secs_f64() * 1e3
            );
        }
    }
    Ok(())
}

fn report_run(s: &RunSummary) {
    let o = &s.output;
    println!("poses            {}", o.trajectory.len());
    println!("mapping rounds   {}", o.mapping_rounds);
    println!("tracking failures {} (re-initializations {})", o.tracking_failures, o.reinitializations);
    println!("trajectory       {}", s.trajectory_path.display());
    println!("point cloud      {} ({} points)", s.cloud_path.display(), o.points.len());
    if let Some(r) = &s.report {
        println!("ATE RMS          {:.4} m", r.ate_rms);
        println!("RPE RMS          {:.4} deg/s  {:.4} m/s", r.rpe_rot, r.rpe_trans);
    }
}

fn write_series(path: &Path, report: &EvaluationReport) -> Result<(), Failure> {
    use std::fmt::Write as _;
    let mut s = String::from("# t est_x est_y est_z gt_x gt_y gt_z\n");
    for (t, e, g) in &report.series {
        let _ = writeln!(s, "{t} {} {} {} {} {} {}", e.x, e.y, e.z, g.x, g.y, g.z);
    }
    std::fs::write(path, s).map_err(Error::from)?;
    Ok(())
}

fn simulate(a: &SimArgs) -> Result<(), Failure> {
    let scene = SceneConfig::by_name(&a.scene, a.seed)
        .ok_or_else(|| Failure::Usage(format!("unknown scene `{}`", a.scene)))?;
    let motion = Motion::by_name(&a.motion)
        .ok_or_else(|| Failure::Usage(format!("unknown motion `{}`", a.motion)))?;
    let mut config = if a.realistic {
        SimConfig::realistic(a.seed)
    } else {
        SimConfig {
            timestamp_jitter: a.jitter,
            noise_rate: a.noise_rate,
            seed: a.seed,
            ..SimConfig::default()
        }
    };
    config.frame_rate = a.frame_rate;
    config.depth_interval = a.depth_interval;
    let traj = SimTrajectory {
        speed: a.speed,
        angular_speed: a.angular_speed,
        ..SimTrajectory::new(motion, a.duration)
    };
    let rig = default_rig();
    let out = simulate_events(&scene, &traj, &rig, &config)?;

    let dir = &a.out;
    std::fs::create_dir_all(dir.join("depth")).map_err(Error::from)?;
    io::write_events(&dir.join("events_left.txt"), &out.left)?;
    io::write_events(&dir.join("events_right.txt"), &out.right)?;
    io::write_calibration(&dir.join("calibration.txt"), &rig)?;
    io::write_trajectory(&dir.join("gt_poses.txt"), &out.trajectory)?;
    for (i, map) in out.depth_maps.iter().enumerate() {
        io::write_float_map(&dir.join("depth").join(format!("depth_{i:05}.txt")), map)?;
    }
    let run = SystemConfig {
        events_left: Some("events_left.txt".into()),
        events_right: Some("events_right.txt".into()),
        calibration: Some("calibration.txt".into()),
        gt_poses: Some("gt_poses.txt".into()),
        output_dir: Some("output".into()),
        ..SystemConfig::default()
    };
    std::fs::write(dir.join("config.txt"), run.to_text()).map_err(Error::from)?;
    info!(
        "{} left and {} right events over {:.2} s written to {}",
        out.left.len(),
        out.right.len(),
        a.duration,
        dir.display()
    );
    Ok(())
}
