//! State-belief prediction under the learned pilot-input model.
//!
//! One step combines every conditional input component `i` with every state
//! component `j` into `N(A μ_j + B μ̂_i, B Σ̂_i Bᵀ + A Σ_j Aᵀ)` with weight
//! `π̂_i π_j / η`, then (optionally) reduces the mixture back to the
//! configured component budget.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mixture::{GaussianComponent, Mixture, MixtureFile};
use crate::plant::{idx, Input, PlantModel, State, STATE_DIM};
use crate::reduce::{reduce_mixture_with, MergeRecord};
use crate::regression::BehaviorModel;

/// Hard cap on components produced by a single expansion.
pub const MAX_RAW_COMPONENTS: usize = 1_000_000;
/// `|η - 1|` beyond which a step is flagged in its diagnostics.
pub const ETA_WARNING: f64 = 1e-6;
/// Diagonal added to degenerate 2×2 position marginals in density grids.
pub const GRID_REGULARIZATION: f64 = 1e-12;

/// State mixture at one prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mixture: Mixture,
    /// Seconds since the obstacle spawn.
    pub time: f64,
    pub step_index: usize,
}

impl Belief {
    pub fn new(mixture: Mixture, time: f64) -> Result<Self> {
        if mixture.dimension() != STATE_DIM {
            return Err(Error::DimensionMismatch {
                expected: STATE_DIM,
                found: mixture.dimension(),
            });
        }
        if !time.is_finite() {
            return Err(Error::NonFinite("belief time"));
        }
        Ok(Self {
            mixture,
            time,
            step_index: 0,
        })
    }

    /// A point belief (single zero-covariance component).
    pub fn point(state: &State, time: f64) -> Result<Self> {
        let mix = Mixture::single(
            DVector::from_column_slice(state.as_slice()),
            DMatrix::zeros(STATE_DIM, STATE_DIM),
        )?;
        Self::new(mix, time)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(Mixture::load(path)?, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictConfig {
    pub horizon_steps: usize,
    pub max_components: usize,
    pub reduce_each_step: bool,
    pub execution: Execution,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 100,
            max_components: 16,
            reduce_each_step: true,
            execution: Execution::default(),
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_components == 0 {
            return Err(Error::InvalidConfig(
                "maxComponents must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// What happened during one prediction step.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepDiagnostics {
    pub step_index: usize,
    /// Sum of the raw (unnormalized) weights.
    pub eta: f64,
    /// `|η - 1| > ETA_WARNING`.
    pub eta_warning: bool,
    pub raw_components: usize,
    pub kept_components: usize,
    /// Conditional input weights fell back to the prior.
    pub input_extrapolated: bool,
    pub merges: Vec<MergeRecord>,
}

/// Beliefs at steps `0..=horizon` and per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrajectory {
    pub beliefs: Vec<Belief>,
    pub steps: Vec<StepDiagnostics>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct BeliefRecord {
    pub step_index: usize,
    pub time: f64,
    pub mixture: MixtureFile,
}

impl BeliefTrajectory {
    pub fn last(&self) -> &Belief {
        self.beliefs
            .last()
            .expect("trajectory holds the initial belief")
    }

    /// Belief whose time is closest to `t`.
    pub fn at_time(&self, t: f64) -> &Belief {
        self.beliefs
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("trajectory holds the initial belief")
    }

    pub fn records(&self) -> Vec<BeliefRecord> {
        self.beliefs
            .iter()
            .map(|b| BeliefRecord {
                step_index: b.step_index,
                time: b.time,
                mixture: b.mixture.to_file(),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.records())?)
    }
}

fn to_state(v: &DVector<f64>) -> State {
    State::from_column_slice(v.as_slice())
}

/// Advances `belief` by one plant step under the conditional input model.
pub fn step_belief(
    belief: &Belief,
    pm: &PlantModel,
    bm: &BehaviorModel,
) -> Result<(Belief, StepDiagnostics)> {
    let inputs = bm.condition_on_time(belief.time)?;
    let m = inputs.mixture.len();
    let l = belief.mixture.len();
    let raw = m.saturating_mul(l);
    if raw > MAX_RAW_COMPONENTS {
        return Err(Error::InvalidConfig(format!(
            "expansion would create {raw} components (limit {MAX_RAW_COMPONENTS}); lower maxComponents"
        )));
    }
    let a = pm.a_dyn();
    let b = pm.b_dyn();
    let at = a.transpose();
    let bt = b.transpose();

    let state_parts: Vec<(f64, State, DMatrix<f64>)> = belief
        .mixture
        .components()
        .iter()
        .map(|c| (c.weight, to_state(&c.mean), &a * &c.covariance * &at))
        .collect();
    let input_parts: Vec<(f64, Input, DMatrix<f64>)> = inputs
        .mixture
        .components()
        .iter()
        .map(|c| {
            (
                c.weight,
                Input::new(c.mean[0], c.mean[1]),
                &b * &c.covariance * &bt,
            )
        })
        .collect();

    let mut components = Vec::with_capacity(raw);
    let mut eta = 0.0;
    for (wi, ui, bsb) in &input_parts {
        for (wj, mj, asa) in &state_parts {
            let w = wi * wj;
            eta += w;
            let mean = pm.step_unchecked(mj, ui, false);
            components.push(GaussianComponent::new(
                w,
                DVector::from_column_slice(mean.as_slice()),
                bsb + asa,
            ));
        }
    }
    if !(eta > 0.0) {
        return Err(Error::Numeric("all propagated weights vanished".into()));
    }
    for c in &mut components {
        c.weight /= eta;
    }
    let eta_warning = (eta - 1.0).abs() > ETA_WARNING;
    if eta_warning {
        log::warn!(
            "step {}: normalization constant deviates from 1 ({eta})",
            belief.step_index
        );
    }
    let step_index = belief.step_index + 1;
    let start = belief.time - belief.step_index as f64 * pm.dt();
    let next = Belief {
        mixture: Mixture::new(components)?,
        time: start + step_index as f64 * pm.dt(),
        step_index,
    };
    let diag = StepDiagnostics {
        step_index,
        eta,
        eta_warning,
        raw_components: raw,
        kept_components: raw,
        input_extrapolated: inputs.extrapolated,
        merges: Vec::new(),
    };
    Ok((next, diag))
}

/// Runs `cfg.horizon_steps` prediction steps, reducing after each one.
pub fn predict(
    initial: &Belief,
    pm: &PlantModel,
    bm: &BehaviorModel,
    cfg: &PredictConfig,
) -> Result<BeliefTrajectory> {
    cfg.validate()?;
    let mut beliefs = Vec::with_capacity(cfg.horizon_steps + 1);
    let mut steps = Vec::with_capacity(cfg.horizon_steps);
    beliefs.push(initial.clone());
    for _ in 0..cfg.horizon_steps {
        let current = beliefs.last().expect("non-empty");
        let (mut next, mut diag) = step_belief(current, pm, bm)?;
        if cfg.reduce_each_step && next.mixture.len() > cfg.max_components {
            let (reduced, merges) =
                reduce_mixture_with(&next.mixture, cfg.max_components, cfg.execution)?;
            next.mixture = reduced;
            diag.merges = merges;
        }
        diag.kept_components = next.mixture.len();
        beliefs.push(next);
        steps.push(diag);
    }
    Ok(BeliefTrajectory { beliefs, steps })
}

/// Position-marginal density sampled on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    /// Row-major: `values[iy * nx + ix]`.
    pub values: Vec<f64>,
    /// Components whose position marginal needed regularization.
    pub regularized: Vec<usize>,
}

impl DensityGrid {
    pub fn x_at(&self, ix: usize) -> f64 {
        self.x_range[0] + (self.x_range[1] - self.x_range[0]) * ix as f64 / (self.nx - 1) as f64
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        self.y_range[0] + (self.y_range[1] - self.y_range[0]) * iy as f64 / (self.ny - 1) as f64
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn cell_area(&self) -> f64 {
        (self.x_range[1] - self.x_range[0]) / (self.nx - 1) as f64
            * (self.y_range[1] - self.y_range[0])
            / (self.ny - 1) as f64
    }

    /// Grid point with the largest density, as `(x, y)`.
    pub fn argmax(&self) -> (f64, f64) {
        let (k, _) = self
            .values
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
            );
        (self.x_at(k % self.nx), self.y_at(k / self.nx))
    }

    /// Two header lines (`x_min,x_max,nx,y_min,y_max,ny` and their values)
    /// followed by `ny` rows of `nx` densities, lowest `y` first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_min,x_max,nx,y_min,y_max,ny\n");
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            self.x_range[0], self.x_range[1], self.nx, self.y_range[0], self.y_range[1], self.ny
        ));
        for iy in 0..self.ny {
            let row: Vec<String> = (0..self.nx)
                .map(|ix| self.value(ix, iy).to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Evaluates the `(p_x, p_y)` marginal of `belief` on an `nx × ny` grid.
pub fn density_grid(
    belief: &Belief,
    x_range: [f64; 2],
    y_range: [f64; 2],
    nx: usize,
    ny: usize,
) -> Result<DensityGrid> {
    density_grid_with(belief, x_range, y_range, nx, ny, Execution::default())
}

pub fn density_grid_with(
    belief: &Belief,
    x_range: [f64; 2],
    y_range: [f64; 2],
    nx: usize,
    ny: usize,
    execution: Execution,
) -> Result<DensityGrid> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidConfig(
            "density grid needs at least 2 points per axis".into(),
        ));
    }
    if !(x_range[0] < x_range[1]) || !(y_range[0] < y_range[1]) {
        return Err(Error::InvalidConfig(
            "density grid ranges must be increasing".into(),
        ));
    }
    let marginal = belief.mixture.marginal(&[idx::PX, idx::PY])?;
    let mut regularized = Vec::new();
    let components = marginal
        .components()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut c = c.clone();
            if crate::linalg::cholesky(&c.covariance).is_none() {
                c.covariance += DMatrix::identity(2, 2) * GRID_REGULARIZATION;
                regularized.push(k);
            }
            c
        })
        .collect();
    let evaluator = Mixture::new(components)?.evaluator()?;
    let mut grid = DensityGrid {
        x_range,
        y_range,
        nx,
        ny,
        values: Vec::new(),
        regularized,
    };
    let rows = execution.map_range(ny, |iy| {
        let y = grid.y_at(iy);
        (0..nx)
            .map(|ix| {
                let p = DVector::from_vec(vec![grid.x_at(ix), y]);
                evaluator.density(&p).expect("2-D point")
            })
            .collect::<Vec<f64>>()
    });
    grid.values = rows.into_iter().flatten().collect();
    Ok(grid)
}
