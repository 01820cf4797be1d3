//! Gaussian-mixture state prediction for a human-piloted planar multi-rotor.
//!
//! The crate learns a time-conditioned model of pilot inputs (a joint
//! time/input Gaussian mixture fitted by EM and queried by Gaussian mixture
//! regression), pushes an uncertain vehicle state through the discrete linear
//! plant under that input model, and keeps the resulting state mixture
//! bounded with K-L upper-bound pairwise reduction. A Monte-Carlo simulator,
//! convex hulls and danger-zone probabilities are provided to check and
//! consume the predictions.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default); every parallel path produces bit-identical results to the
//! sequential one.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod hull;
pub mod linalg;
pub mod mixture;
pub mod oracle;
pub mod plant;
pub mod propagate;
pub mod quadrature;
pub mod reduce;
pub mod regression;
pub mod risk;
pub mod rng;
pub mod scenario;
pub mod trajio;

pub use error::{Error, ErrorKind, Result};
pub use exec::Execution;
pub use mixture::{EmConfig, EmFit, GaussianComponent, Mixture};
pub use plant::{PlantModel, PlantParams};
pub use propagate::{Belief, BeliefTrajectory, PredictConfig};
pub use regression::{BehaviorModel, InputDistribution};
pub use risk::DangerZone;
pub use trajio::{Outcome, TrainingWindow, Trajectory};
