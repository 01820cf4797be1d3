//! Landing-mission world and the synthetic pilot used to generate trials.
//!
//! The world is a vertical slice with lanes, a touchpad on the ground and a
//! rectangular obstacle that pops up below the vehicle at a random instant.
//! The synthetic pilot descends along its lane with an LQR feedback law,
//! draws its inputs from a behavior model for a fixed window after the
//! spawn, then steers around the obstacle and lands.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mixture::{GaussianComponent, Mixture, Sampler};
use crate::plant::{idx, Input, PlantModel, State};
use crate::propagate::Belief;
use crate::regression::BehaviorModel;
use crate::risk::DangerZone;
use crate::rng;
use crate::trajio::{Outcome, TrajSample, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn centered(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self {
            x_min: cx - 0.5 * width,
            x_max: cx + 0.5 * width,
            y_min: cy - 0.5 * height,
            y_max: cy + 0.5 * height,
        }
    }

    /// Whether a disc of `radius` around `(x, y)` touches the rectangle.
    pub fn touches_disc(&self, x: f64, y: f64, radius: f64) -> bool {
        let cx = x.clamp(self.x_min, self.x_max);
        let cy = y.clamp(self.y_min, self.y_max);
        (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpawnRule {
    /// Spawn instant is drawn uniformly from this window (seconds after start).
    pub time_window: [f64; 2],
    /// Candidate obstacle-center x positions.
    pub candidate_x: Vec<f64>,
    /// Obstacle center is placed this far below the vehicle at the spawn.
    pub gap_below: f64,
    /// Obstacle `[width, height]`.
    pub size: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct WorldConfig {
    /// Lane boundary x positions, increasing; the outer two bound the world.
    pub lane_boundaries: Vec<f64>,
    /// Index of the lane the pilot follows (lane `i` spans boundaries `i..i+1`).
    pub designated_lane: usize,
    pub ground_y: f64,
    /// Touchpad x-extent on the ground.
    pub touchpad: [f64; 2],
    pub start_height: f64,
    pub descent_speed: f64,
    pub ceiling: f64,
    pub spawn: SpawnRule,
    pub hazards: Vec<Rect>,
    pub vehicle_radius: f64,
    /// Touchdown counts as a landing when `|v_y|` is at most this.
    pub landing_speed: f64,
    /// Trials longer than this are aborted.
    pub max_duration: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            lane_boundaries: vec![-20.0, 0.0, 20.0],
            designated_lane: 1,
            ground_y: 0.0,
            touchpad: [7.0, 13.0],
            start_height: 60.0,
            descent_speed: 3.0,
            ceiling: 120.0,
            spawn: SpawnRule {
                time_window: [2.0, 4.0],
                candidate_x: vec![6.0, 10.0, 14.0],
                gap_below: 15.0,
                size: [6.0, 2.0],
            },
            hazards: Vec::new(),
            vehicle_radius: 0.2,
            landing_speed: 1.0,
            max_duration: 90.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let lanes = &self.lane_boundaries;
        if lanes.len() < 2 || lanes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig(
                "lane boundaries must be at least two increasing values".into(),
            ));
        }
        if self.designated_lane + 1 >= lanes.len() {
            return Err(Error::InvalidConfig(
                "designated lane does not exist".into(),
            ));
        }
        let (x_min, x_max) = (lanes[0], lanes[lanes.len() - 1]);
        if !(self.touchpad[0] < self.touchpad[1])
            || self.touchpad[0] < x_min
            || self.touchpad[1] > x_max
        {
            return Err(Error::InvalidConfig(
                "touchpad must be an interval on the ground inside the lanes".into(),
            ));
        }
        if self.spawn.candidate_x.is_empty()
            || self
                .spawn
                .candidate_x
                .iter()
                .any(|&x| x < x_min || x > x_max)
        {
            return Err(Error::InvalidConfig(
                "obstacle candidates must lie within the lanes".into(),
            ));
        }
        if !(self.spawn.time_window[0] >= 0.0
            && self.spawn.time_window[0] <= self.spawn.time_window[1])
        {
            return Err(Error::InvalidConfig(
                "spawn time window must be ordered and non-negative".into(),
            ));
        }
        if !(self.start_height > self.ground_y && self.ceiling > self.start_height) {
            return Err(Error::InvalidConfig(
                "need ground < start height < ceiling".into(),
            ));
        }
        if !(self.descent_speed > 0.0
            && self.landing_speed > 0.0
            && self.vehicle_radius >= 0.0
            && self.max_duration > 0.0)
        {
            return Err(Error::InvalidConfig(
                "speeds, radius and duration must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let cfg: WorldConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lane_center(&self) -> f64 {
        0.5 * (self.lane_boundaries[self.designated_lane]
            + self.lane_boundaries[self.designated_lane + 1])
    }

    pub fn x_bounds(&self) -> [f64; 2] {
        [
            self.lane_boundaries[0],
            *self.lane_boundaries.last().expect("validated"),
        ]
    }

    pub fn touchpad_center(&self) -> f64 {
        0.5 * (self.touchpad[0] + self.touchpad[1])
    }

    /// Hovering-descent state at the top of the designated lane.
    pub fn start_state(&self) -> State {
        let mut x = State::zeros();
        x[idx::PX] = self.lane_center();
        x[idx::PY] = self.start_height;
        x[idx::VY] = -self.descent_speed;
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum WorldEvent {
    ObstacleSpawned { obstacle: Rect },
    Landed,
    Collided,
    LeftBounds,
}

impl WorldEvent {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, WorldEvent::ObstacleSpawned { .. })
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match self {
            WorldEvent::ObstacleSpawned { .. } => None,
            WorldEvent::Landed => Some(Outcome::Landed),
            WorldEvent::Collided => Some(Outcome::Collided),
            WorldEvent::LeftBounds => Some(Outcome::Aborted),
        }
    }
}

/// Runtime world state for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub dt: f64,
    /// Step index at which the obstacle appears.
    pub spawn_step: usize,
    pub candidate: usize,
    pub obstacle: Option<Rect>,
}

impl World {
    /// Draws the spawn instant (on the step grid) and obstacle candidate from `seed`.
    pub fn new(config: WorldConfig, dt: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, u64::MAX);
        let [lo, hi] = config.spawn.time_window;
        let t = lo + (hi - lo) * rng.random::<f64>();
        let spawn_step = (t / dt).round() as usize;
        let candidate = rng.random_range(0..config.spawn.candidate_x.len());
        Ok(Self {
            config,
            dt,
            spawn_step,
            candidate,
            obstacle: None,
        })
    }

    pub fn spawn_time(&self) -> f64 {
        self.spawn_step as f64 * self.dt
    }

    pub fn spawned(&self) -> bool {
        self.obstacle.is_some()
    }

    /// Advances the world to step `k` with the vehicle at `state`.
    ///
    /// Spawns the obstacle once at the scheduled step, then reports collision,
    /// touchdown or bounds events for the current state.
    pub fn step(&mut self, state: &State, k: usize) -> Vec<WorldEvent> {
        let mut events = Vec::new();
        let (px, py) = (state[idx::PX], state[idx::PY]);
        if self.obstacle.is_none() && k >= self.spawn_step {
            let spawn = &self.config.spawn;
            let rect = Rect::centered(
                spawn.candidate_x[self.candidate],
                py - spawn.gap_below,
                spawn.size[0],
                spawn.size[1],
            );
            self.obstacle = Some(rect);
            events.push(WorldEvent::ObstacleSpawned { obstacle: rect });
        }
        let r = self.config.vehicle_radius;
        let hit = self
            .obstacle
            .iter()
            .chain(self.config.hazards.iter())
            .any(|o| o.touches_disc(px, py, r));
        if hit {
            events.push(WorldEvent::Collided);
            return events;
        }
        if py <= self.config.ground_y {
            let on_pad = px >= self.config.touchpad[0] && px <= self.config.touchpad[1];
            if on_pad && state[idx::VY].abs() <= self.config.landing_speed {
                events.push(WorldEvent::Landed);
            } else {
                events.push(WorldEvent::Collided);
            }
            return events;
        }
        let [x_min, x_max] = self.config.x_bounds();
        if px < x_min || px > x_max || py > self.config.ceiling {
            events.push(WorldEvent::LeftBounds);
        }
        events
    }
}

/// State-feedback gains `u = u_ff - K (x - x_ref)`.
pub type Gains = SMatrix<f64, 2, 6>;

/// Infinite-horizon discrete LQR gain by Riccati iteration.
pub fn lqr_gains(pm: &PlantModel, q: [f64; 6], r: [f64; 2]) -> Result<Gains> {
    let a = pm.a;
    let b = pm.b;
    let qm = SMatrix::<f64, 6, 6>::from_diagonal(&SVector::from(q));
    let rm = SMatrix::<f64, 2, 2>::from_diagonal(&SVector::from(r));
    let mut p = qm;
    for _ in 0..20_000 {
        let s = rm + b.transpose() * p * b;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular Riccati gain matrix".into()))?;
        let k = s_inv * b.transpose() * p * a;
        let next = qm + a.transpose() * p * (a - b * k);
        let next = 0.5 * (next + next.transpose());
        let delta = (next - p).amax();
        p = next;
        if delta <= 1e-11 * p.amax().max(1.0) {
            break;
        }
    }
    let s = rm + b.transpose() * p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numeric("singular Riccati gain matrix".into()))?;
    Ok(s_inv * b.transpose() * p * a)
}

/// Lane-holding constant-descent feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentPolicy {
    pub gains: Gains,
    /// Clearance kept around the obstacle while steering past it.
    pub clearance: f64,
}

impl DescentPolicy {
    pub const DEFAULT_Q: [f64; 6] = [0.5, 0.0, 20.0, 2.0, 4.0, 0.1];
    pub const DEFAULT_R: [f64; 2] = [40.0, 1.0];

    pub fn for_plant(pm: &PlantModel) -> Result<Self> {
        Ok(Self {
            gains: lqr_gains(pm, Self::DEFAULT_Q, Self::DEFAULT_R)?,
            clearance: 2.0,
        })
    }

    /// Input driving `x` toward `p_x = x_target` at vertical speed `vy_target`.
    pub fn input(&self, pm: &PlantModel, x: &State, x_target: f64, vy_target: f64) -> Input {
        let mut reference = State::zeros();
        reference[idx::PX] = x_target;
        reference[idx::PY] = x[idx::PY];
        reference[idx::VY] = vy_target;
        let thrust_ff = -pm.params.k1 * pm.params.mass * vy_target;
        let u = Input::new(0.0, thrust_ff) - self.gains * (x - reference);
        pm.saturate(&u)
    }

    /// Steers around `obstacle` (if any) and lands on the touchpad.
    pub fn recovery_input(
        &self,
        pm: &PlantModel,
        world: &WorldConfig,
        obstacle: Option<&Rect>,
        x: &State,
    ) -> Input {
        let (px, py) = (x[idx::PX], x[idx::PY]);
        let height = py - world.ground_y;
        let mut vy_target = -(0.5 * height).clamp(0.4, world.descent_speed);
        let mut x_target = world.touchpad_center();
        if let Some(o) = obstacle {
            let m = self.clearance;
            if py > o.y_min - m {
                let blocked = |x: f64| x > o.x_min - m && x < o.x_max + m;
                if blocked(px) || blocked(x_target) {
                    let left = o.x_min - m - 1.0;
                    let right = o.x_max + m + 1.0;
                    let [x_lo, x_hi] = world.x_bounds();
                    let left_ok = left > x_lo + 1.0;
                    let right_ok = right < x_hi - 1.0;
                    x_target = match (left_ok, right_ok) {
                        (true, true) => {
                            if (px - left).abs() <= (px - right).abs() {
                                left
                            } else {
                                right
                            }
                        }
                        (true, false) => left,
                        _ => right,
                    };
                    if blocked(px) && py - o.y_max < 3.0 * m {
                        vy_target = 0.0;
                    }
                }
            }
        }
        self.input(pm, x, x_target, vy_target)
    }
}

/// Scripted stand-in for a human pilot.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPilot {
    /// Ground-truth behavior sampled after the obstacle spawn.
    pub behavior: BehaviorModel,
    pub policy: DescentPolicy,
    pub noise_seed: u64,
    /// Seconds after the spawn during which inputs come from `behavior`.
    pub evasion_duration: f64,
}

impl SyntheticPilot {
    pub fn new(behavior: BehaviorModel, pm: &PlantModel, noise_seed: u64) -> Result<Self> {
        Ok(Self {
            behavior,
            policy: DescentPolicy::for_plant(pm)?,
            noise_seed,
            evasion_duration: 4.5,
        })
    }
}

/// Flies one trial; `seed` fixes both the world's spawn schedule and the pilot's draws.
pub fn simulate_trial(
    pilot: &SyntheticPilot,
    pm: &PlantModel,
    world_cfg: &WorldConfig,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    let dt = pm.dt();
    let mut world = World::new(
        world_cfg.clone(),
        dt,
        seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15),
    )?;
    let mut rng = rng::stream(seed ^ pilot.noise_seed.rotate_left(17), index);
    let evasion_steps = crate::trajio::window_rows(pilot.evasion_duration, dt);
    let samplers = (0..evasion_steps)
        .map(|j| {
            Ok(Sampler::new(
                &pilot.behavior.condition_on_time(j as f64 * dt)?.mixture,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_steps = (world_cfg.max_duration / dt).ceil() as usize;

    let mut x = world_cfg.start_state();
    let mut samples = Vec::new();
    let mut outcome = Outcome::Aborted;
    for k in 0..=max_steps {
        let events = world.step(&x, k);
        let terminal = events.iter().find_map(WorldEvent::outcome);
        let t = k as f64 * dt;
        if let Some(o) = terminal {
            outcome = o;
            samples.push(TrajSample {
                t,
                state: x,
                input: Input::zeros(),
            });
            break;
        }
        if k == max_steps {
            samples.push(TrajSample {
                t,
                state: x,
                input: Input::zeros(),
            });
            break;
        }
        let u = if !world.spawned() {
            pilot
                .policy
                .input(pm, &x, world_cfg.lane_center(), -world_cfg.descent_speed)
        } else if k - world.spawn_step < evasion_steps {
            let v = samplers[k - world.spawn_step].draw(&mut rng);
            pm.saturate(&Input::new(v[0], v[1]))
        } else {
            pilot
                .policy
                .recovery_input(pm, world_cfg, world.obstacle.as_ref(), &x)
        };
        samples.push(TrajSample {
            t,
            state: x,
            input: u,
        });
        x = pm.step(&x, &u, true)?;
    }
    Ok(Trajectory {
        samples,
        spawn_time: world.spawned().then(|| world.spawn_time()),
        outcome,
        dt,
    })
}

/// `n` independent trials, deterministic in `seed`.
pub fn generate_synthetic_trials(
    pilot: &SyntheticPilot,
    pm: &PlantModel,
    world: &WorldConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    world.validate()?;
    Execution::default()
        .map_range(n, |i| simulate_trial(pilot, pm, world, seed, i as u64))
        .into_iter()
        .collect()
}

/// The built-in ground-truth pilot: brake the descent right after the spawn,
/// drift sideways, then resume descending. Joint layout `[t, α, T]`.
pub fn default_pilot_behavior() -> BehaviorModel {
    let table: [(f64, [f64; 3], [f64; 6]); 3] = [
        // weight, mean, upper triangle (tt, tα, tT, αα, αT, TT)
        (
            1.0 / 3.0,
            [0.75, 0.002, 0.6],
            [0.19, 0.0002, -0.01, 4e-6, 0.0, 0.01],
        ),
        (
            1.0 / 3.0,
            [2.25, -0.001, 0.1],
            [0.19, -0.0001, 0.005, 4e-6, 0.0, 0.01],
        ),
        (
            1.0 / 3.0,
            [3.75, 0.0, -0.4],
            [0.19, 0.0, -0.008, 4e-6, 0.0, 0.01],
        ),
    ];
    let components = table
        .iter()
        .map(|(w, m, u)| {
            let cov = DMatrix::from_row_slice(
                3,
                3,
                &[u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5]],
            );
            GaussianComponent::new(*w, DVector::from_column_slice(m), cov)
        })
        .collect();
    let joint = Mixture::new(components).expect("built-in behavior model is valid");
    BehaviorModel::split_blocks(&joint).expect("built-in behavior model has positive time variance")
}

/// Initial uncertainty around `x0`: three equally weighted components with
/// offsets `0`, `[1,1,0.1,1,1,0.05]`, `[-1,1,-0.1,-1,-1,-0.05]` and shared
/// covariance `diag(1.5, 1.5, 0.05, 1, 2, 0.05)`.
pub fn initial_uncertainty(x0: &State) -> Mixture {
    let offsets = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.1, 1.0, 1.0, 0.05],
        [-1.0, 1.0, -0.1, -1.0, -1.0, -0.05],
    ];
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, 1.5, 0.05, 1.0, 2.0, 0.05]));
    let components = offsets
        .iter()
        .map(|o| {
            let mean = DVector::from_fn(6, |i, _| x0[i] + o[i]);
            GaussianComponent::new(1.0 / 3.0, mean, cov.clone())
        })
        .collect();
    Mixture::new(components).expect("fixed initial uncertainty is valid")
}

/// The default prediction scenario: the vehicle descending in its lane at
/// the moment of a spawn, with [`initial_uncertainty`] around it.
pub fn default_initial_belief(world: &WorldConfig) -> Belief {
    let mut x0 = world.start_state();
    x0[idx::PY] = 45.0;
    Belief::new(initial_uncertainty(&x0), 0.0).expect("six-dimensional belief")
}

/// Strip between the vehicle and the right edge of its lane.
pub fn default_danger_zone() -> DangerZone {
    DangerZone::new(12.0, 20.0, 40.0, 52.0).expect("ordered bounds")
}
