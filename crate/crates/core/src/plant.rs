//! Discrete linear planar multi-rotor.
//!
//! State `[p_x, p_y, θ, v_x, v_y, w]`, input `[α, T]`, with
//! `x_{k+1} = A x_k + B u_k`.

use std::path::Path;

use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = SVector<f64, 6>;
pub type Input = SVector<f64, 2>;
pub type StateMatrix = SMatrix<f64, 6, 6>;
pub type InputMatrix = SMatrix<f64, 6, 2>;

pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 2;

/// Indices into the state vector.
pub mod idx {
    pub const PX: usize = 0;
    pub const PY: usize = 1;
    pub const THETA: usize = 2;
    pub const VX: usize = 3;
    pub const VY: usize = 4;
    pub const W: usize = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PlantParams {
    pub dt: f64,
    pub g: f64,
    pub mass: f64,
    pub inertia_x: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub alpha_bounds: [f64; 2],
    pub thrust_bounds: [f64; 2],
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            dt: 0.04,
            g: 9.8,
            mass: 0.25,
            inertia_x: 0.01,
            k1: -0.1,
            k2: -1.0,
            k3: -30.0,
            alpha_bounds: [-0.5, 0.5],
            thrust_bounds: [-1.7, 1.7],
        }
    }
}

impl PlantParams {
    /// `dt = 0` is accepted and yields `A = I`, `B = 0`.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.dt,
            self.g,
            self.mass,
            self.inertia_x,
            self.k1,
            self.k2,
            self.k3,
            self.alpha_bounds[0],
            self.alpha_bounds[1],
            self.thrust_bounds[0],
            self.thrust_bounds[1],
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "plant parameters must be finite".into(),
            ));
        }
        if self.dt < 0.0 {
            return Err(Error::InvalidConfig("dt must be non-negative".into()));
        }
        if self.mass <= 0.0 || self.inertia_x <= 0.0 {
            return Err(Error::InvalidConfig(
                "mass and inertiaX must be positive".into(),
            ));
        }
        if self.alpha_bounds[0] > self.alpha_bounds[1]
            || self.thrust_bounds[0] > self.thrust_bounds[1]
        {
            return Err(Error::InvalidConfig("input bounds must be ordered".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let params: PlantParams = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }
}

/// The `(A, B)` pair built from [`PlantParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub params: PlantParams,
}

impl Default for PlantModel {
    fn default() -> Self {
        Self::new(PlantParams::default()).expect("default parameters are valid")
    }
}

impl PlantModel {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        let dt = params.dt;
        let mut a = StateMatrix::identity();
        a[(idx::PX, idx::VX)] = dt;
        a[(idx::PY, idx::VY)] = dt;
        a[(idx::THETA, idx::W)] = dt;
        a[(idx::VX, idx::THETA)] = params.g * dt;
        a[(idx::VY, idx::VY)] = 1.0 + params.k1 * dt;
        a[(idx::W, idx::THETA)] = params.k2 * dt;
        a[(idx::W, idx::W)] = 1.0 + params.k3 * dt;

        let mut b = InputMatrix::zeros();
        b[(idx::VY, 1)] = dt / params.mass;
        b[(idx::W, 0)] = dt / params.inertia_x;
        Ok(Self { a, b, params })
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn a_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(6, 6, self.a.as_slice())
    }

    pub fn b_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(6, 2, self.b.as_slice())
    }

    /// Clamps `u` into the actuator bounds.
    pub fn saturate(&self, u: &Input) -> Input {
        let p = &self.params;
        Input::new(
            u[0].clamp(p.alpha_bounds[0], p.alpha_bounds[1]),
            u[1].clamp(p.thrust_bounds[0], p.thrust_bounds[1]),
        )
    }

    /// `A x + B u`, clamping `u` first when `saturate` is set.
    pub fn step(&self, x: &State, u: &Input, saturate: bool) -> Result<State> {
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant step input"));
        }
        Ok(self.step_unchecked(x, u, saturate))
    }

    /// [`step`](Self::step) without the finiteness check, for hot loops with
    /// inputs that are finite by construction.
    #[inline]
    pub fn step_unchecked(&self, x: &State, u: &Input, saturate: bool) -> State {
        let u = if saturate { self.saturate(u) } else { *u };
        self.a * x + self.b * u
    }

    /// States `x0, x1, ..., x_n` for `n` inputs.
    pub fn rollout(&self, x0: &State, inputs: &[Input], saturate: bool) -> Result<Vec<State>> {
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push(*x0);
        let mut x = *x0;
        for u in inputs {
            x = self.step(&x, u, saturate)?;
            out.push(x);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dt_gives_identity() {
        let pm = PlantModel::new(PlantParams {
            dt: 0.0,
            ..PlantParams::default()
        })
        .unwrap();
        assert_eq!(pm.a, StateMatrix::identity());
        assert_eq!(pm.b, InputMatrix::zeros());
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            PlantParams {
                mass: 0.0,
                ..Default::default()
            },
            PlantParams {
                inertia_x: -1.0,
                ..Default::default()
            },
            PlantParams {
                dt: -0.1,
                ..Default::default()
            },
            PlantParams {
                alpha_bounds: [1.0, -1.0],
                ..Default::default()
            },
            PlantParams {
                g: f64::NAN,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(PlantModel::new(p).is_err(), "{p:?}");
        }
    }

    #[test]
    fn thrust_only_excites_vertical_velocity() {
        let pm = PlantModel::default();
        let x1 = pm
            .step(&State::zeros(), &Input::new(0.0, 1.2), false)
            .unwrap();
        let mut expected = State::zeros();
        expected[idx::VY] = 1.2 * 0.04 / 0.25;
        assert_eq!(x1, expected);
        let x2 = pm.step(&x1, &Input::zeros(), false).unwrap();
        assert!(x2[idx::PY] > 0.0);
        assert_eq!(x2[idx::PX], 0.0);
    }

    #[test]
    fn attitude_tilts_horizontal_velocity() {
        let pm = PlantModel::default();
        let mut x = State::zeros();
        x[idx::THETA] = 0.1;
        let next = pm.step(&x, &Input::zeros(), false).unwrap();
        assert!((next[idx::VX] - 0.0392).abs() < 1e-15);
    }

    #[test]
    fn nan_input_rejected() {
        let pm = PlantModel::default();
        assert!(pm
            .step(&State::zeros(), &Input::new(f64::NAN, 0.0), false)
            .is_err());
        let mut x = State::zeros();
        x[3] = f64::INFINITY;
        assert!(pm.rollout(&x, &[Input::zeros()], true).is_err());
    }

    #[test]
    fn saturation_clamps() {
        let pm = PlantModel::default();
        assert_eq!(pm.saturate(&Input::new(2.0, -5.0)), Input::new(0.5, -1.7));
    }

    #[test]
    fn params_json_roundtrip() {
        let p = PlantParams::default();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("inertiaX"));
        let back: PlantParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
    }
}
