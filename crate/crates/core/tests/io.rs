use esvo_core::geometry::{Se3, TrajectoryDb};
use esvo_core::io::{self, FloatMap};
use esvo_core::time_surface::{Event, Polarity};
use esvo_core::Error;
use nalgebra::Vector3;
use proptest::prelude::*;

fn events() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0.0f64..1e-3, 0u16..346, 0u16..260, any::<bool>()), 0..300).prop_map(|v| {
        let mut t = 0.0;
        v.into_iter()
            .map(|(dt, x, y, on)| {
                t += dt;
                let pol = if on { Polarity::Positive } else { Polarity::Negative };
                Event::new(t, x, y, pol)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn events_round_trip(ev in events()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        io::write_events(&path, &ev).unwrap();
        prop_assert_eq!(io::read_events(&path).unwrap(), ev);
    }

    #[test]
    fn trajectories_round_trip(
        knots in prop::collection::vec(
            (0.001f64..0.1, prop::array::uniform3(-1.0f64..1.0), -3.0f64..3.0, prop::array::uniform3(-5.0f64..5.0)),
            1..40,
        )
    ) {
        let mut t = 0.0;
        let knots: Vec<(f64, Se3)> = knots
            .into_iter()
            .filter_map(|(dt, axis, angle, tr)| {
                t += dt;
                let axis = Vector3::from(axis);
                (axis.norm() > 1e-3).then(|| (t, Se3::from_axis_angle(&axis, angle, Vector3::from(tr))))
            })
            .collect();
        prop_assume!(!knots.is_empty());
        let traj = TrajectoryDb::from_knots(knots).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        io::write_trajectory(&path, &traj).unwrap();
        prop_assert_eq!(io::read_trajectory(&path).unwrap(), traj);
    }

    #[test]
    fn float_maps_round_trip(
        w in 1usize..20,
        h in 1usize..20,
        t in 0.0f64..100.0,
        seed in prop::collection::vec(prop::option::of(-1e6f64..1e6), 400),
    ) {
        let data = seed[..w * h].iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let map = FloatMap::new(w, h, t, data);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        io::write_float_map(&path, &map).unwrap();
        prop_assert!(io::read_float_map(&path).unwrap().bit_eq(&map));
    }
}

#[test]
fn malformed_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        ("events.txt", "0.1 3 4 1\n0.2 3 x 0\n"),
        ("calib.txt", "fx = 200\n"),
        ("traj.txt", "0.0 1 2 3 0 0 0\n"),
        ("map.txt", "2 2 0.0\n1 2 3\n"),
    ];
    for (name, text) in bad {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    let p = |n: &str| dir.path().join(n);
    let errors: Vec<Error> = vec![
        io::read_events(&p("events.txt")).unwrap_err(),
        io::read_calibration(&p("calib.txt")).unwrap_err(),
        io::read_trajectory(&p("traj.txt")).unwrap_err(),
        io::read_float_map(&p("map.txt")).unwrap_err(),
        io::read_ply(&p("missing.ply")).unwrap_err(),
    ];
    for e in errors {
        assert!(e.is_data_error(), "{e}");
    }
}
