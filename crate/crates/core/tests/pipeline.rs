use esvo_core::geometry::Se3;
use esvo_core::io;
use esvo_core::pipeline::{
    active_pixels, bootstrap, evaluate_ate, run_from_config, run_vo, Scenario, SystemConfig,
};
use esvo_core::simulator::Motion;

#[test]
fn bootstrap_maps_most_active_pixels() {
    let sc = Scenario::simulate(Motion::TranslateX, 0.1, 1000.0, 1).unwrap();
    let cfg = SystemConfig::default();
    let t = 0.05;
    let obs = sc.observation_at(t, cfg.decay).unwrap();
    let map = bootstrap(
        &obs,
        &sc.rig,
        &cfg.mapper,
        cfg.bootstrap_min_active,
        cfg.bootstrap_scale,
        Se3::identity(),
    )
    .unwrap();
    let active = active_pixels(&obs.left).len();
    assert!(map.len() as f64 >= 0.5 * active as f64, "{} of {active}", map.len());

    let mut rel: Vec<f64> = map
        .iter()
        .filter_map(|(_, e)| {
            let rho = sc.gt_inverse_depth_at(t, &e.pixel)?;
            Some((1.0 / e.mean - 1.0 / rho).abs() * rho)
        })
        .collect();
    rel.sort_by(f64::total_cmp);
    assert!(rel[rel.len() / 2] < 0.15, "median relative depth error {}", rel[rel.len() / 2]);
}

#[test]
fn short_sequence_stays_on_ground_truth() {
    let sc = Scenario::simulate(Motion::TranslateX, 0.6, 1000.0, 2).unwrap();
    let cfg = SystemConfig::default();
    let out = run_vo(&sc.data.left, &sc.data.right, &sc.rig, &cfg, None, &mut ()).unwrap();
    assert!(out.trajectory.len() >= 50, "{} poses", out.trajectory.len());
    assert!(out.mapping_rounds > 0);
    let ate = evaluate_ate(&out.trajectory, &sc.data.trajectory).unwrap();
    assert!(ate < 0.02, "ATE {ate}");
}

#[test]
fn config_run_writes_outputs() {
    let sc = Scenario::simulate(Motion::TranslateY, 0.5, 500.0, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    io::write_events(&p("left.txt"), &sc.data.left).unwrap();
    io::write_events(&p("right.txt"), &sc.data.right).unwrap();
    io::write_calibration(&p("calib.txt"), &sc.rig).unwrap();
    io::write_trajectory(&p("gt.txt"), &sc.data.trajectory).unwrap();
    let cfg = SystemConfig {
        events_left: Some(p("left.txt")),
        events_right: Some(p("right.txt")),
        calibration: Some(p("calib.txt")),
        gt_poses: Some(p("gt.txt")),
        output_dir: Some(p("out")),
        use_gt_poses: true,
        // One point cloud batch and one saved map every four mapping rounds.
        fusion_window: 4,
        ..SystemConfig::default()
    };
    let summary = run_from_config(&cfg).unwrap();
    assert!(summary.report.is_none());
    let traj = io::read_trajectory(&summary.trajectory_path).unwrap();
    assert_eq!(traj, summary.output.trajectory);
    let cloud = io::read_ply(&summary.cloud_path).unwrap();
    assert_eq!(cloud.len(), summary.output.points.len());
    assert!(!cloud.is_empty());
    let maps = std::fs::read_dir(p("out").join("maps")).unwrap().count();
    assert!(maps > 0);
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SystemConfig {
        events_left: Some(dir.path().join("nope.txt")),
        events_right: Some(dir.path().join("nope.txt")),
        calibration: Some(dir.path().join("nope.txt")),
        output_dir: Some(dir.path().join("out")),
        ..SystemConfig::default()
    };
    let err = run_from_config(&cfg).unwrap_err();
    assert!(err.is_data_error(), "{err}");
    let cfg = SystemConfig {
        events_left: None,
        ..cfg
    };
    assert!(run_from_config(&cfg).is_err());
}
