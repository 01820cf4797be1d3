//! One piloted flight: plant, world and the recording under construction.

use std::path::{Path, PathBuf};

use gmreach::plant::{Input, PlantModel, State};
use gmreach::propagate::{density_grid, predict, Belief, PredictConfig};
use gmreach::regression::BehaviorModel;
use gmreach::risk::{collision_probability, DangerZone};
use gmreach::scenario::{World, WorldConfig, WorldEvent};
use gmreach::trajio::{list_trials, trial_path, Outcome, TrajSample, Trajectory};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Phase {
    PreSpawn,
    PostSpawn,
    Ended,
}

/// Live prediction settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayConfig {
    pub model: BehaviorModel,
    /// Recompute cadence in ticks.
    pub every_ticks: u64,
    pub horizon_steps: usize,
    pub max_components: usize,
    /// Grid half-extent around the vehicle (m).
    pub half_extent: f64,
    pub grid_points: usize,
}

impl OverlayConfig {
    pub fn new(model: BehaviorModel) -> Self {
        Self {
            model,
            every_ticks: 25,
            horizon_steps: 50,
            max_components: 8,
            half_extent: 20.0,
            grid_points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridPayload {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
    /// Row-major, lowest `y` row first.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Overlay {
    /// Simulation time of the state the prediction started from.
    pub issued_at: f64,
    pub horizon: f64,
    pub grid: GridPayload,
    /// Probability of being inside the obstacle at the end of the horizon.
    pub risk: f64,
}

/// Server → client message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "frame", rename_all = "camelCase")]
pub struct Frame {
    pub t: f64,
    pub state: [f64; 6],
    pub events: Vec<WorldEvent>,
    pub terminal: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlay: Option<Overlay>,
}

/// Client → server message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ClientMessage {
    Input { alpha: f64, thrust: f64, seq: u64 },
}

/// Everything needed to compute an overlay away from the tick loop.
#[derive(Debug, Clone)]
pub struct OverlayJob {
    pub state: State,
    pub issued_at: f64,
    pub elapsed_since_spawn: f64,
    pub obstacle: DangerZone,
    pub plant: PlantModel,
    pub config: OverlayConfig,
}

impl OverlayJob {
    pub fn run(&self) -> gmreach::Result<Overlay> {
        let belief = Belief::point(&self.state, self.elapsed_since_spawn)?;
        let cfg = PredictConfig {
            horizon_steps: self.config.horizon_steps,
            max_components: self.config.max_components,
            ..PredictConfig::default()
        };
        let traj = predict(&belief, &self.plant, &self.config.model, &cfg)?;
        let last = traj.last();
        let (px, py) = (self.state[0], self.state[1]);
        let h = self.config.half_extent;
        let n = self.config.grid_points;
        let grid = density_grid(last, [px - h, px + h], [py - h, py + h], n, n)?;
        Ok(Overlay {
            issued_at: self.issued_at,
            horizon: self.config.horizon_steps as f64 * self.plant.dt(),
            grid: GridPayload {
                x_min: grid.x_range[0],
                x_max: grid.x_range[1],
                nx: grid.nx,
                y_min: grid.y_range[0],
                y_max: grid.y_range[1],
                ny: grid.ny,
                values: grid.values,
            },
            risk: collision_probability(last, &self.obstacle),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub plant: PlantModel,
    pub world: World,
    pub state: State,
    pub clock: u64,
    pub phase: Phase,
    pub outcome: Option<Outcome>,
    pub overlay: Option<OverlayConfig>,
    samples: Vec<TrajSample>,
}

impl Session {
    /// Vehicle starts at the top of its lane, descending at the configured speed.
    pub fn create(
        id: String,
        world: WorldConfig,
        plant: PlantModel,
        seed: u64,
        overlay: Option<OverlayConfig>,
    ) -> gmreach::Result<Self> {
        let mut world = World::new(world, plant.dt(), seed)?;
        let state = world.config.start_state();
        let events = world.step(&state, 0);
        let phase = if world.spawned() {
            Phase::PostSpawn
        } else {
            Phase::PreSpawn
        };
        let mut session = Self {
            id,
            plant,
            world,
            state,
            clock: 0,
            phase,
            outcome: None,
            overlay,
            samples: vec![TrajSample {
                t: 0.0,
                state,
                input: Input::zeros(),
            }],
        };
        session.absorb(&events);
        Ok(session)
    }

    pub fn time(&self) -> f64 {
        self.clock as f64 * self.plant.dt()
    }

    pub fn samples(&self) -> &[TrajSample] {
        &self.samples
    }

    fn absorb(&mut self, events: &[WorldEvent]) {
        if self.world.spawned() && self.phase == Phase::PreSpawn {
            self.phase = Phase::PostSpawn;
        }
        if let Some(o) = events.iter().find_map(WorldEvent::outcome) {
            self.outcome = Some(o);
            self.phase = Phase::Ended;
        }
    }

    fn frame(&self, events: Vec<WorldEvent>) -> Frame {
        let mut state = [0.0; 6];
        state.copy_from_slice(self.state.as_slice());
        Frame {
            t: self.time(),
            state,
            events,
            terminal: self.phase == Phase::Ended,
            outcome: self.outcome,
            overlay: None,
        }
    }

    /// Advances one step with `input` (saturated) held over the interval.
    pub fn tick(&mut self, input: Input) -> Frame {
        if self.phase == Phase::Ended {
            return self.frame(Vec::new());
        }
        // Non-finite client input is treated as released controls.
        let input = if input.iter().all(|v| v.is_finite()) {
            input
        } else {
            Input::zeros()
        };
        let u = self.plant.saturate(&input);
        let next = self.plant.step_unchecked(&self.state, &u, false);
        if !next.iter().all(|v| v.is_finite()) {
            // Unreachable with finite inputs; end the flight rather than record garbage.
            self.outcome = Some(Outcome::Aborted);
            self.phase = Phase::Ended;
            return self.frame(Vec::new());
        }
        self.samples
            .last_mut()
            .expect("recording starts with the initial state")
            .input = u;
        self.state = next;
        self.clock += 1;
        self.samples.push(TrajSample {
            t: self.time(),
            state: next,
            input: Input::zeros(),
        });
        let events = self.world.step(&next, self.clock as usize);
        self.absorb(&events);
        self.frame(events)
    }

    /// Overlay work due after the latest tick, if any.
    pub fn overlay_job(&self) -> Option<OverlayJob> {
        let cfg = self.overlay.as_ref()?;
        if self.phase != Phase::PostSpawn || !self.clock.is_multiple_of(cfg.every_ticks) {
            return None;
        }
        let o = self.world.obstacle?;
        Some(OverlayJob {
            state: self.state,
            issued_at: self.time(),
            elapsed_since_spawn: self.time() - self.world.spawn_time(),
            obstacle: DangerZone::new(o.x_min, o.x_max, o.y_min, o.y_max).ok()?,
            plant: self.plant.clone(),
            config: cfg.clone(),
        })
    }

    /// Ends the flight (aborted if still flying) and returns the recording.
    pub fn end(&mut self) -> Trajectory {
        if self.phase != Phase::Ended {
            self.phase = Phase::Ended;
            self.outcome = Some(Outcome::Aborted);
        }
        self.trajectory()
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            samples: self.samples.clone(),
            spawn_time: self.world.spawned().then(|| self.world.spawn_time()),
            outcome: self.outcome.unwrap_or(Outcome::Aborted),
            dt: self.plant.dt(),
        }
    }
}

/// Saves `traj` under the next free `trial_NNN.csv` name in `dir`.
pub fn persist(traj: &Trajectory, dir: &Path) -> Result<PathBuf, ServiceError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| ServiceError::Storage(format!("creating {}: {e}", dir.display())))?;
    let taken = list_trials(dir)?.len();
    let mut index = taken;
    let mut path = trial_path(dir, index);
    while path.exists() {
        index += 1;
        path = trial_path(dir, index);
    }
    traj.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gmreach::scenario::default_pilot_behavior;

    fn session(seed: u64) -> Session {
        Session::create(
            "s".into(),
            WorldConfig::default(),
            PlantModel::default(),
            seed,
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_input_matches_plant_step() {
        let mut s = session(1);
        let x0 = s.state;
        let f = s.tick(Input::zeros());
        let expected = s.plant.step(&x0, &Input::zeros(), true).unwrap();
        assert_eq!(f.state, <[f64; 6]>::try_from(expected.as_slice()).unwrap());
        assert_eq!(f.t, 0.04);
    }

    #[test]
    fn inputs_are_saturated_in_the_recording() {
        let mut s = session(1);
        s.tick(Input::new(2.0, -9.0));
        assert_eq!(s.samples()[0].input, Input::new(0.5, -1.7));
    }

    #[test]
    fn sample_counts() {
        let mut s = session(3);
        assert_eq!(s.end().samples.len(), 1);
        let mut s = session(3);
        for _ in 0..300 {
            let vy = s.state[4];
            s.tick(Input::new(0.0, (-2.0 * vy).clamp(-1.7, 1.7)));
        }
        let traj = s.end();
        assert_eq!(traj.samples.len(), 301);
        assert!((traj.samples[300].t - 12.0).abs() < 1e-9);
        assert_eq!(traj.outcome, Outcome::Aborted);
        traj.validate().unwrap();
    }

    #[test]
    fn same_seed_same_schedule() {
        let a = session(9);
        let b = session(9);
        assert_eq!(a.world.spawn_step, b.world.spawn_step);
        assert_eq!(a.world.candidate, b.world.candidate);
    }

    #[test]
    fn ended_session_reports_terminal_frames() {
        let mut s = session(1);
        s.end();
        let f = s.tick(Input::zeros());
        assert!(f.terminal);
        assert_eq!(f.t, 0.0);
    }

    #[test]
    fn overlay_is_due_on_cadence_after_spawn() {
        let mut s = Session::create(
            "s".into(),
            WorldConfig::default(),
            PlantModel::default(),
            4,
            Some(OverlayConfig::new(default_pilot_behavior())),
        )
        .unwrap();
        let mut jobs = 0;
        while s.phase != Phase::Ended && s.clock < 200 {
            // hover to stay clear of the obstacle
            let vy = s.state[4];
            s.tick(Input::new(0.0, (-2.0 * vy).clamp(-1.7, 1.7)));
            if let Some(job) = s.overlay_job() {
                assert_eq!(s.clock % 25, 0);
                let o = job.run().unwrap();
                assert!((0.0..=1.0).contains(&o.risk));
                assert_eq!(o.grid.values.len(), 41 * 41);
                assert!((o.horizon - 2.0).abs() < 1e-12);
                jobs += 1;
            }
        }
        assert!(jobs >= 3);
    }

    #[test]
    fn frame_wire_format() {
        let mut s = session(1);
        let f = s.tick(Input::zeros());
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        assert_eq!(v["type"], "frame");
        assert_eq!(v["state"].as_array().unwrap().len(), 6);
        assert!(v.get("overlay").is_none());
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"input","alpha":0.1,"thrust":-1,"seq":7}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Input {
                alpha: 0.1,
                thrust: -1.0,
                seq: 7
            }
        );
    }
}
