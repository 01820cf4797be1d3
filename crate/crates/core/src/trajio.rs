//! Piloting-trial records, their CSV + JSON sidecar files, and the
//! post-spawn training windows fed to EM.
//!
//! A trial `trial_007` is stored as `trial_007.csv` (one row per sample,
//! header [`CSV_HEADER`]) next to `trial_007.json` holding
//! `{spawnTime, outcome, dt}`. Numbers are written with Rust's shortest
//! round-trip formatting, so save/load is bit-exact.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{Input, State};

pub const CSV_HEADER: [&str; 9] = ["t", "px", "py", "theta", "vx", "vy", "w", "alpha", "thrust"];

/// Slack on sample spacing and spawn alignment.
pub const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Landed,
    Collided,
    Aborted,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Landed => "landed",
            Outcome::Collided => "collided",
            Outcome::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajSample {
    pub t: f64,
    pub state: State,
    pub input: Input,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajSample>,
    /// Obstacle pop-up instant; `None` when the trial ended before a spawn.
    pub spawn_time: Option<f64>,
    pub outcome: Outcome,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialMeta {
    pub spawn_time: Option<f64>,
    pub outcome: Outcome,
    pub dt: f64,
}

impl Trajectory {
    /// Checks timing invariants: finite fields, strictly increasing uniform
    /// timestamps and a spawn time on the sample grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        for (row, s) in self.samples.iter().enumerate() {
            let fields = std::iter::once(s.t)
                .chain(s.state.iter().copied())
                .chain(s.input.iter().copied());
            for (value, name) in fields.zip(CSV_HEADER) {
                if !value.is_finite() {
                    return Err(Error::NanField {
                        row,
                        field: name.to_string(),
                    });
                }
            }
        }
        // Ordering is checked over the whole file first so a shuffled log is
        // reported as such rather than as a spacing problem.
        if let Some(k) = self.samples.windows(2).position(|p| p[1].t <= p[0].t) {
            return Err(Error::NonMonotonicTime { row: k + 1 });
        }
        for (k, pair) in self.samples.windows(2).enumerate() {
            let spacing = pair[1].t - pair[0].t;
            if (spacing - self.dt).abs() > TIME_TOLERANCE {
                return Err(Error::NonUniformDt {
                    row: k + 1,
                    spacing,
                    dt: self.dt,
                });
            }
        }
        if let Some(spawn) = self.spawn_time {
            self.spawn_index_of(spawn)?;
        }
        Ok(())
    }

    fn spawn_index_of(&self, spawn: f64) -> Result<usize> {
        self.samples
            .iter()
            .position(|s| (s.t - spawn).abs() <= TIME_TOLERANCE)
            .ok_or(Error::SpawnNotOnGrid(spawn))
    }

    /// Index of the sample at the spawn instant.
    pub fn spawn_index(&self) -> Result<usize> {
        self.spawn_index_of(self.spawn_time.ok_or(Error::MissingSpawn)?)
    }

    pub fn meta(&self) -> TrialMeta {
        TrialMeta {
            spawn_time: self.spawn_time,
            outcome: self.outcome,
            dt: self.dt,
        }
    }

    /// Writes the CSV body; the sidecar is produced by [`Trajectory::meta`].
    pub fn to_csv_string(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(CSV_HEADER)?;
        for s in &self.samples {
            let mut record = Vec::with_capacity(9);
            record.push(s.t.to_string());
            record.extend(s.state.iter().map(f64::to_string));
            record.extend(s.input.iter().map(f64::to_string));
            wtr.write_record(&record)?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::io("flushing CSV", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is ASCII"))
    }

    /// Parses a CSV body plus sidecar metadata and validates the result.
    pub fn from_csv_str(csv_text: &str, meta: &TrialMeta, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(csv_text.as_bytes());
        let header = rdr.headers()?.clone();
        if header.len() != CSV_HEADER.len() || header.iter().zip(CSV_HEADER).any(|(a, b)| a != b) {
            return Err(Error::MalformedHeader {
                path: origin.to_path_buf(),
                detail: format!(
                    "expected `{}`, found `{}`",
                    CSV_HEADER.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut samples = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::MalformedRow {
                row,
                detail: e.to_string(),
            })?;
            if record.len() != CSV_HEADER.len() {
                return Err(Error::MalformedRow {
                    row,
                    detail: format!(
                        "expected {} fields, found {}",
                        CSV_HEADER.len(),
                        record.len()
                    ),
                });
            }
            let mut values = [0.0; 9];
            for (i, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::MalformedRow {
                    row,
                    detail: format!("field `{}` is not a number: {field:?}", CSV_HEADER[i]),
                })?;
                if !v.is_finite() {
                    return Err(Error::NanField {
                        row,
                        field: CSV_HEADER[i].to_string(),
                    });
                }
                values[i] = v;
            }
            samples.push(TrajSample {
                t: values[0],
                state: State::from_column_slice(&values[1..7]),
                input: Input::new(values[7], values[8]),
            });
        }
        let traj = Trajectory {
            samples,
            spawn_time: meta.spawn_time,
            outcome: meta.outcome,
            dt: meta.dt,
        };
        traj.validate()?;
        Ok(traj)
    }

    /// Saves `path` (CSV) and its `.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let csv_text = self.to_csv_string()?;
        std::fs::write(path, csv_text)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let side = sidecar_path(path);
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(&side, meta).map_err(|e| Error::io(format!("writing {}", side.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let meta_text = std::fs::read_to_string(&side)
            .map_err(|e| Error::io(format!("reading {}", side.display()), e))?;
        let meta: TrialMeta = serde_json::from_str(&meta_text)?;
        let csv_text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_csv_str(&csv_text, &meta, path)
    }
}

/// `trial_007.csv` → `trial_007.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Canonical file name for trial `index` inside `dir`.
pub fn trial_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("trial_{index:03}.csv"))
}

/// All `trial_*.csv` files in `dir`, sorted by name.
pub fn list_trials(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .path();
        let is_trial = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("trial_") && n.ends_with(".csv"));
        if is_trial {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// EM training rows `[t - t_spawn, α, T]` from one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub rows: Vec<[f64; 3]>,
    pub duration: f64,
}

impl TrainingWindow {
    pub fn to_points(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        self.rows.iter().map(|r| DVector::from_column_slice(r))
    }
}

/// Rows in a window of `duration` seconds at sample spacing `dt`.
pub fn window_rows(duration: f64, dt: f64) -> usize {
    (duration / dt + TIME_TOLERANCE).floor() as usize + 1
}

/// Cuts the `duration`-second window starting at the obstacle spawn, with
/// time re-based to zero at the spawn. Only landed trials are accepted.
pub fn extract_window(traj: &Trajectory, duration: f64) -> Result<TrainingWindow> {
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "window duration must be >= 0, got {duration}"
        )));
    }
    if traj.outcome != Outcome::Landed {
        return Err(Error::NotLanded(traj.outcome.to_string()));
    }
    let start = traj.spawn_index()?;
    let spawn = traj.spawn_time.expect("spawn index implies a spawn time");
    let needed = window_rows(duration, traj.dt);
    let available = traj.samples.len() - start;
    if available < needed {
        return Err(Error::TrajectoryTooShort { needed, available });
    }
    let rows = traj.samples[start..start + needed]
        .iter()
        .map(|s| [s.t - spawn, s.input[0], s.input[1]])
        .collect();
    Ok(TrainingWindow { rows, duration })
}

/// Concatenates windows into EM training vectors.
pub fn training_points(windows: &[TrainingWindow]) -> Vec<DVector<f64>> {
    windows.iter().flat_map(|w| w.to_points()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, spawn_row: usize, outcome: Outcome) -> Trajectory {
        let dt = 0.04;
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                TrajSample {
                    t,
                    state: State::from_fn(|i, _| (t * (i + 1) as f64).sin()),
                    input: Input::new(0.1 * t.cos(), -0.3 + t / 7.0),
                }
            })
            .collect();
        Trajectory {
            samples,
            spawn_time: Some(spawn_row as f64 * dt),
            outcome,
            dt,
        }
    }

    #[test]
    fn four_and_a_half_second_window_has_113_rows() {
        let traj = synthetic(200, 10, Outcome::Landed);
        let w = extract_window(&traj, 4.5).unwrap();
        assert_eq!(w.rows.len(), 113);
        assert_eq!(w.rows[0][0], 0.0);
        assert!(w.rows.iter().all(|r| r[0] >= 0.0 && r[0] <= 4.5 + 1e-9));
        assert_eq!(window_rows(4.5, 0.04), 113);
    }

    #[test]
    fn zero_duration_is_single_row() {
        let traj = synthetic(20, 3, Outcome::Landed);
        let w = extract_window(&traj, 0.0).unwrap();
        assert_eq!(w.rows.len(), 1);
        assert_eq!(w.rows[0][0], 0.0);
    }

    #[test]
    fn rejections() {
        let short = synthetic(50, 10, Outcome::Landed);
        assert!(matches!(
            extract_window(&short, 4.5),
            Err(Error::TrajectoryTooShort { .. })
        ));
        let crashed = synthetic(200, 10, Outcome::Collided);
        assert!(
            matches!(extract_window(&crashed, 4.5), Err(Error::NotLanded(o)) if o == "collided")
        );
        let mut no_spawn = synthetic(200, 10, Outcome::Landed);
        no_spawn.spawn_time = None;
        assert!(matches!(
            extract_window(&no_spawn, 1.0),
            Err(Error::MissingSpawn)
        ));
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let traj = synthetic(57, 5, Outcome::Landed);
        let path = trial_path(dir.path(), 7);
        traj.save(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = Trajectory::load(&path).unwrap();
        assert_eq!(traj, back);
        assert_eq!(list_trials(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let meta = TrialMeta {
            spawn_time: Some(0.0),
            outcome: Outcome::Landed,
            dt: 0.04,
        };
        let origin = Path::new("x.csv");
        let header = CSV_HEADER.join(",");
        let bad_header = "t,px,py,theta,vx,vy,w,alpha,T\n0,0,0,0,0,0,0,0,0\n";
        assert!(matches!(
            Trajectory::from_csv_str(bad_header, &meta, origin),
            Err(Error::MalformedHeader { .. })
        ));
        let decreasing = format!("{header}\n0.04,0,0,0,0,0,0,0,0\n0,0,0,0,0,0,0,0,0\n");
        let err = Trajectory::from_csv_str(&decreasing, &meta, origin).unwrap_err();
        assert!(matches!(err, Error::NonMonotonicTime { row: 1 }));
        assert_eq!(err.to_string(), "non-monotonic time at row 1");
        let uneven =
            format!("{header}\n0,0,0,0,0,0,0,0,0\n0.04,0,0,0,0,0,0,0,0\n0.1,0,0,0,0,0,0,0,0\n");
        assert!(matches!(
            Trajectory::from_csv_str(&uneven, &meta, origin),
            Err(Error::NonUniformDt { row: 2, .. })
        ));
        let nan = format!("{header}\n0,0,0,NaN,0,0,0,0,0\n");
        assert!(
            matches!(Trajectory::from_csv_str(&nan, &meta, origin), Err(Error::NanField { row: 0, ref field }) if field == "theta")
        );
        let off_grid = TrialMeta {
            spawn_time: Some(0.02),
            ..meta
        };
        let ok = format!("{header}\n0,0,0,0,0,0,0,0,0\n0.04,0,0,0,0,0,0,0,0\n");
        assert!(matches!(
            Trajectory::from_csv_str(&ok, &off_grid, origin),
            Err(Error::SpawnNotOnGrid(_))
        ));
    }
}
