//! Trial files on disk: round trips and the distinct parse errors.

use std::path::Path;

use gmreach::plant::{Input, State};
use gmreach::trajio::{extract_window, list_trials, trial_path, TrajSample, CSV_HEADER};
use gmreach::{Error, Outcome, Trajectory};

fn trial(n: usize, spawn_row: usize) -> Trajectory {
    let dt = 0.04;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            TrajSample {
                t,
                state: State::from_fn(|i, _| {
                    (1.0 / 3.0) * (t + i as f64).sin() * 1e3_f64.powi(i as i32 - 2)
                }),
                input: Input::new(0.1 / 7.0 * t, -1.7 + t / 3.0),
            }
        })
        .collect();
    Trajectory {
        samples,
        spawn_time: Some(spawn_row as f64 * dt),
        outcome: Outcome::Landed,
        dt,
    }
}

fn write_pair(dir: &Path, name: &str, csv: &str, meta: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, csv).unwrap();
    std::fs::write(path.with_extension("json"), meta).unwrap();
    path
}

const META: &str = r#"{"spawnTime": 0.0, "outcome": "landed", "dt": 0.04}"#;

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let t = trial(150, 20);
    let path = trial_path(dir.path(), 7);
    t.save(&path).unwrap();
    assert!(path.ends_with("trial_007.csv"));
    let back = Trajectory::load(&path).unwrap();
    assert_eq!(back, t);
    for (a, b) in back.samples.iter().zip(&t.samples) {
        assert_eq!(a.t.to_bits(), b.t.to_bits());
        assert!(a
            .state
            .iter()
            .zip(b.state.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(list_trials(dir.path()).unwrap(), vec![path]);
}

#[test]
fn fixture_with_spawn_at_row_zero_gives_113_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = CSV_HEADER.join(",") + "\n";
    for k in 0..113 {
        let t = k as f64 * 0.04;
        csv += &format!("{t},10,50,0,0,-3,0,0.001,0.5\n");
    }
    let path = write_pair(dir.path(), "trial_000.csv", &csv, META);
    let w = extract_window(&Trajectory::load(&path).unwrap(), 4.5).unwrap();
    assert_eq!(w.rows.len(), 113);
    assert_eq!(w.rows[0], [0.0, 0.001, 0.5]);
    assert!((w.rows[112][0] - 4.48).abs() < 1e-9);
    let w0 = extract_window(&Trajectory::load(&path).unwrap(), 0.0).unwrap();
    assert_eq!(w0.rows.len(), 1);
}

#[test]
fn window_rejections() {
    let short = trial(100, 0);
    assert!(matches!(
        extract_window(&short, 4.5),
        Err(Error::TrajectoryTooShort {
            needed: 113,
            available: 100
        })
    ));
    let mut crashed = trial(200, 0);
    crashed.outcome = Outcome::Collided;
    assert!(matches!(
        extract_window(&crashed, 4.5),
        Err(Error::NotLanded(_))
    ));
    let mut no_spawn = trial(200, 0);
    no_spawn.spawn_time = None;
    assert!(matches!(
        extract_window(&no_spawn, 4.5),
        Err(Error::MissingSpawn)
    ));
}

#[test]
fn parse_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let header = CSV_HEADER.join(",");

    let p = write_pair(
        d,
        "a.csv",
        &format!("{header}\n0,0,0,0,0,0,0,0,0\n0.08,0,0,0,0,0,0,0,0\n0.04,0,0,0,0,0,0,0,0\n"),
        META,
    );
    let e = Trajectory::load(&p).unwrap_err();
    assert!(e.to_string().contains("non-monotonic time"), "{e}");

    let p = write_pair(
        d,
        "b.csv",
        &format!("{header}\n0,0,0,0,0,0,0,0,0\n0.05,0,0,0,0,0,0,0,0\n"),
        META,
    );
    assert!(matches!(
        Trajectory::load(&p),
        Err(Error::NonUniformDt { .. })
    ));

    let p = write_pair(
        d,
        "c.csv",
        &format!("{header}\n0,0,0,NaN,0,0,0,0,0\n"),
        META,
    );
    assert!(matches!(Trajectory::load(&p), Err(Error::NanField { .. })));

    let p = write_pair(d, "d.csv", "t,x,y\n0,0,0\n", META);
    assert!(matches!(
        Trajectory::load(&p),
        Err(Error::MalformedHeader { .. })
    ));

    let p = write_pair(
        d,
        "e.csv",
        &format!("{header}\n0,0,0,0,0,0,0,0,0\n"),
        r#"{"spawnTime": 0.02, "outcome": "landed", "dt": 0.04}"#,
    );
    assert!(matches!(
        Trajectory::load(&p),
        Err(Error::SpawnNotOnGrid(_))
    ));
}
