//! Monte-Carlo forward simulation of the plant.
//!
//! Two input modes: inputs drawn uniformly inside the actuator bounds, or
//! drawn from the behavior model's conditional input mixture at each step.
//! Sample `i` consumes only random stream `(seed, i)`: first its initial
//! state, then its inputs, so runs that share a seed share initial states.

use nalgebra::{DMatrix, DVector, SMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hull::{convex_hull, Point};
use crate::mixture::{Mixture, Sampler};
use crate::plant::{idx, Input, PlantModel, State};
use crate::propagate::Belief;
use crate::regression::BehaviorModel;
use crate::rng;

pub type StateCovariance = SMatrix<f64, 6, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum InputMode {
    /// Independent `α ~ U[α bounds]`, `T ~ U[T bounds]` each step.
    UniformBounds,
    /// Draws from the conditional input mixture at the step's time.
    BehaviorModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples: usize,
    pub horizon_steps: usize,
    pub input_mode: InputMode,
    pub seed: u64,
    /// Clamp behavior-model inputs to the actuator bounds.
    pub saturate: bool,
    /// Keep the states of every step, not only the last.
    pub record_steps: bool,
    pub execution: Execution,
}

impl McConfig {
    pub fn new(samples: usize, horizon_steps: usize, input_mode: InputMode, seed: u64) -> Self {
        Self {
            samples,
            horizon_steps,
            input_mode,
            seed,
            saturate: false,
            record_steps: false,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub final_states: Vec<State>,
    /// `per_step_states[k][i]`: sample `i` at step `k` (`k = 0..=horizon`).
    pub per_step_states: Option<Vec<Vec<State>>>,
    /// Hull of the final `(p_x, p_y)` positions, counter-clockwise.
    pub convex_hull: Vec<Point>,
    pub empirical_mean: State,
    /// Unbiased (`n - 1`) sample covariance; zero for a single sample.
    pub empirical_cov: StateCovariance,
}

impl McResult {
    /// Final `(p_x, p_y)` of every sample.
    pub fn final_positions(&self) -> Vec<Point> {
        positions(&self.final_states)
    }
}

pub fn positions(states: &[State]) -> Vec<Point> {
    states.iter().map(|s| [s[idx::PX], s[idx::PY]]).collect()
}

enum InputSource {
    Uniform { alpha: [f64; 2], thrust: [f64; 2] },
    Conditional(Vec<Sampler>),
}

/// Runs `cfg.samples` independent rollouts from `initial`.
pub fn run_monte_carlo(
    initial: &Belief,
    pm: &PlantModel,
    bm: Option<&BehaviorModel>,
    cfg: &McConfig,
) -> Result<McResult> {
    if cfg.samples == 0 {
        return Err(Error::InvalidConfig(
            "Monte-Carlo needs at least one sample".into(),
        ));
    }
    let source = match cfg.input_mode {
        InputMode::UniformBounds => InputSource::Uniform {
            alpha: pm.params.alpha_bounds,
            thrust: pm.params.thrust_bounds,
        },
        InputMode::BehaviorModel => {
            let bm = bm.ok_or_else(|| {
                Error::InvalidConfig("behaviorModel input mode requires a behavior model".into())
            })?;
            let start = initial.time - initial.step_index as f64 * pm.dt();
            let samplers = (0..cfg.horizon_steps)
                .map(|k| {
                    let t = start + (initial.step_index + k) as f64 * pm.dt();
                    Ok(Sampler::new(&bm.condition_on_time(t)?.mixture))
                })
                .collect::<Result<Vec<_>>>()?;
            InputSource::Conditional(samplers)
        }
    };
    let init_sampler = Sampler::new(&initial.mixture);
    let saturate = cfg.saturate;

    let runs = cfg.execution.map_range(cfg.samples, |i| {
        let mut rng = rng::stream(cfg.seed, i as u64);
        let x0 = init_sampler.draw(&mut rng);
        let mut x = State::from_column_slice(x0.as_slice());
        let mut path = if cfg.record_steps {
            Vec::with_capacity(cfg.horizon_steps + 1)
        } else {
            Vec::new()
        };
        if cfg.record_steps {
            path.push(x);
        }
        for k in 0..cfg.horizon_steps {
            let u = match &source {
                InputSource::Uniform { alpha, thrust } => Input::new(
                    alpha[0] + (alpha[1] - alpha[0]) * rng.random::<f64>(),
                    thrust[0] + (thrust[1] - thrust[0]) * rng.random::<f64>(),
                ),
                InputSource::Conditional(samplers) => {
                    let v = samplers[k].draw(&mut rng);
                    Input::new(v[0], v[1])
                }
            };
            x = pm.step_unchecked(&x, &u, saturate);
            if cfg.record_steps {
                path.push(x);
            }
        }
        (x, path)
    });

    let mut final_states = Vec::with_capacity(cfg.samples);
    let mut paths = Vec::new();
    for (x, path) in runs {
        final_states.push(x);
        if cfg.record_steps {
            paths.push(path);
        }
    }
    let per_step_states = cfg.record_steps.then(|| {
        (0..=cfg.horizon_steps)
            .map(|k| paths.iter().map(|p| p[k]).collect())
            .collect()
    });
    let (empirical_mean, empirical_cov) = sample_moments(&final_states);
    Ok(McResult {
        convex_hull: convex_hull(&positions(&final_states)),
        final_states,
        per_step_states,
        empirical_mean,
        empirical_cov,
    })
}

/// Sample mean and unbiased covariance, summed in index order.
pub fn sample_moments(states: &[State]) -> (State, StateCovariance) {
    let n = states.len();
    let mut mean = State::zeros();
    for s in states {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = StateCovariance::zeros();
    if n > 1 {
        for s in states {
            let d = s - mean;
            cov += d * d.transpose();
        }
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Standard errors of the sample mean per coordinate.
pub fn mean_standard_errors(states: &[State]) -> State {
    let (_, cov) = sample_moments(states);
    State::from_fn(|i, _| (cov[(i, i)] / states.len() as f64).sqrt())
}

/// Standard error of each sample-covariance entry, estimated from the
/// empirical variance of the centered products.
pub fn covariance_standard_errors(states: &[State]) -> StateCovariance {
    let n = states.len() as f64;
    let (mean, cov) = sample_moments(states);
    let mut second = StateCovariance::zeros();
    for s in states {
        let d = s - mean;
        let prod = d * d.transpose();
        second += (prod - cov).component_mul(&(prod - cov));
    }
    (second / (n - 1.0) / n).map(f64::sqrt)
}

/// Fraction of `points` inside the highest-density region of `mix` that holds
/// `level` of its mass. The density threshold is the `(1 - level)` quantile of
/// the mixture density over `reference` draws from `mix` itself.
pub fn fraction_in_density_region(
    mix: &Mixture,
    reference: &[DVector<f64>],
    points: &[DVector<f64>],
    level: f64,
) -> Result<f64> {
    if reference.is_empty() || points.is_empty() {
        return Err(Error::InvalidConfig(
            "density-region check needs samples".into(),
        ));
    }
    let eval = mix.evaluator()?;
    let mut ref_logs = reference
        .iter()
        .map(|x| eval.log_density(x))
        .collect::<Result<Vec<f64>>>()?;
    ref_logs.sort_by(f64::total_cmp);
    let cut = ((1.0 - level) * ref_logs.len() as f64).floor() as usize;
    let threshold = ref_logs[cut.min(ref_logs.len() - 1)];
    let mut inside = 0usize;
    for x in points {
        if eval.log_density(x)? >= threshold {
            inside += 1;
        }
    }
    Ok(inside as f64 / points.len() as f64)
}

/// Converts fixed-size states into dynamic vectors.
pub fn to_dvectors(states: &[State]) -> Vec<DVector<f64>> {
    states
        .iter()
        .map(|s| DVector::from_column_slice(s.as_slice()))
        .collect()
}

/// Dynamic copy of a 6×6 covariance.
pub fn to_dmatrix(m: &StateCovariance) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 6, m.as_slice())
}
