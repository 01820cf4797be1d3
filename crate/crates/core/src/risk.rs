//! Danger-zone collision probability of a state belief.
//!
//! For each component the rectangle probability of its `(p_x, p_y)` marginal
//! is computed as `∫ φ_x(x) P(y ∈ [y0, y1] | x) dx`: the inner conditional
//! is an exact normal interval probability and the outer integral uses
//! adaptive Gauss–Kronrod quadrature. Degenerate marginals reduce to their
//! one- or zero-dimensional limits.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::GaussianComponent;
use crate::plant::idx;
use crate::propagate::{Belief, BeliefTrajectory};
use crate::quadrature::{integrate_pieces, normal_interval, std_normal_pdf};

/// Absolute error target for a whole-belief probability.
pub const PROBABILITY_TOLERANCE: f64 = 1e-8;
/// Marginal variances at or below this (m²) are treated as exactly zero.
const DEGENERATE_VARIANCE: f64 = 1e-24;
/// Standard deviations beyond which the outer integrand is dropped.
const TAIL_CUTOFF: f64 = 40.0;

/// Axis-aligned rectangle in the `(p_x, p_y)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DangerZone {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl DangerZone {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::InvalidConfig(format!(
                "danger zone needs xMin < xMax and yMin < yMax, got [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

impl FromStr for DangerZone {
    type Err = Error;

    /// `xmin,xmax,ymin,ymax`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                Error::InvalidConfig(format!("zone `{s}` is not four comma-separated numbers"))
            })?;
        match parts.as_slice() {
            &[x0, x1, y0, y1] => DangerZone::new(x0, x1, y0, y1),
            _ => Err(Error::InvalidConfig(format!(
                "zone `{s}` needs exactly four numbers"
            ))),
        }
    }
}

/// Probability mass of one component's position marginal inside `zone`,
/// ignoring the component weight.
pub fn component_zone_probability(c: &GaussianComponent, zone: &DangerZone, tol: f64) -> f64 {
    let mx = c.mean[idx::PX];
    let my = c.mean[idx::PY];
    let sxx = c.covariance[(idx::PX, idx::PX)];
    let syy = c.covariance[(idx::PY, idx::PY)];
    let sxy = c.covariance[(idx::PX, idx::PY)];
    rectangle_probability([mx, my], [sxx, sxy, syy], zone, tol)
}

/// `P((X, Y) ∈ zone)` for a bivariate normal with mean `mean` and
/// covariance entries `[σ_xx, σ_xy, σ_yy]`.
pub fn rectangle_probability(mean: [f64; 2], cov: [f64; 3], zone: &DangerZone, tol: f64) -> f64 {
    let [mx, my] = mean;
    let [sxx, sxy, syy] = cov;
    let x_deg = sxx <= DEGENERATE_VARIANCE;
    let y_deg = syy <= DEGENERATE_VARIANCE;
    match (x_deg, y_deg) {
        (true, true) => {
            if zone.contains(mx, my) {
                1.0
            } else {
                0.0
            }
        }
        (true, false) => {
            normal_interval(mx, 0.0, zone.x_min, zone.x_max)
                * normal_interval(my, syy.sqrt(), zone.y_min, zone.y_max)
        }
        (false, true) => {
            normal_interval(my, 0.0, zone.y_min, zone.y_max)
                * normal_interval(mx, sxx.sqrt(), zone.x_min, zone.x_max)
        }
        (false, false) => {
            let sx = sxx.sqrt();
            let slope = sxy / sxx;
            let cond_var = syy - sxy * sxy / sxx;
            if cond_var <= 1e-12 * syy {
                // y is an affine function of x: intersect the x-interval it maps into the zone
                let (mut lo, mut hi) = (zone.x_min, zone.x_max);
                if slope == 0.0 {
                    if my < zone.y_min || my > zone.y_max {
                        return 0.0;
                    }
                } else {
                    let a = mx + (zone.y_min - my) / slope;
                    let b = mx + (zone.y_max - my) / slope;
                    lo = lo.max(a.min(b));
                    hi = hi.min(a.max(b));
                }
                return normal_interval(mx, sx, lo, hi);
            }
            let cond_sd = cond_var.sqrt();
            let lo = zone.x_min.max(mx - TAIL_CUTOFF * sx);
            let hi = zone.x_max.min(mx + TAIL_CUTOFF * sx);
            if !(lo < hi) {
                return 0.0;
            }
            let integrand = |x: f64| {
                let z = (x - mx) / sx;
                let cond_mean = my + slope * (x - mx);
                std_normal_pdf(z) / sx * normal_interval(cond_mean, cond_sd, zone.y_min, zone.y_max)
            };
            let mut breaks: Vec<f64> = [
                -8.0, -6.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0,
            ]
            .iter()
            .map(|k| mx + k * sx)
            .collect();
            if slope != 0.0 {
                breaks.push(mx + (zone.y_min - my) / slope);
                breaks.push(mx + (zone.y_max - my) / slope);
            }
            integrate_pieces(integrand, lo, hi, &breaks, tol).clamp(0.0, 1.0)
        }
    }
}

/// Total belief probability inside `zone`.
pub fn collision_probability(belief: &Belief, zone: &DangerZone) -> f64 {
    let comps = belief.mixture.components();
    let tol = PROBABILITY_TOLERANCE / comps.len() as f64;
    let p: f64 = comps
        .iter()
        .map(|c| c.weight * component_zone_probability(c, zone, tol))
        .sum();
    p.clamp(0.0, 1.0)
}

/// `(time, probability)` for every belief in the trajectory.
pub fn risk_profile(traj: &BeliefTrajectory, zone: &DangerZone) -> Vec<(f64, f64)> {
    traj.beliefs
        .iter()
        .map(|b| (b.time, collision_probability(b, zone)))
        .collect()
}

/// `t,probability` rows.
pub fn profile_to_csv(profile: &[(f64, f64)]) -> String {
    let mut out = String::from("t,probability\n");
    for (t, p) in profile {
        out.push_str(&format!("{t},{p}\n"));
    }
    out
}
