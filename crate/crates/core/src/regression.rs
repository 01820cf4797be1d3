//! Gaussian mixture regression: conditions the joint `(time, α, T)` behavior
//! mixture on elapsed time since the obstacle spawn.
//!
//! Files store each joint component in `[t, α, T]` order. Internally the
//! blocks follow the `[u; t]` convention: `μ^u`, `μ^t`, `Σ^u`, `Σ^t`, `Σ^{ut}`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::mixture::{log_sum_exp, GaussianComponent, Mixture};

/// Below this log density the time marginals underflow in linear space
/// (about 37.6 standard deviations out).
const LOG_UNDERFLOW: f64 = -708.396_418_532_264_1;

/// One joint component split into input and time blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorComponent {
    pub weight: f64,
    pub mean_u: Vector2<f64>,
    pub mean_t: f64,
    pub cov_u: Matrix2<f64>,
    pub cov_t: f64,
    /// `Σ^{ut}`; `Σ^{tu}` is its transpose.
    pub cov_ut: Vector2<f64>,
    gain: Vector2<f64>,
    conditional_cov: Matrix2<f64>,
    log_time_scale: f64,
}

impl BehaviorComponent {
    /// `Σ^u - Σ^{ut} (Σ^t)^{-1} Σ^{tu}`, independent of the conditioning time.
    pub fn conditional_covariance(&self) -> &Matrix2<f64> {
        &self.conditional_cov
    }

    /// `μ^u + Σ^{ut} (Σ^t)^{-1} (t - μ^t)`.
    pub fn conditional_mean(&self, t: f64) -> Vector2<f64> {
        self.mean_u + self.gain * (t - self.mean_t)
    }

    /// `ln π + ln N(t; μ^t, Σ^t)`.
    fn log_time_weight(&self, t: f64) -> f64 {
        let z = t - self.mean_t;
        self.log_time_scale - 0.5 * z * z / self.cov_t
    }
}

/// The trained stochastic pilot model.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorModel {
    components: Vec<BehaviorComponent>,
    joint: Mixture,
}

/// Control-input mixture at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDistribution {
    pub mixture: Mixture,
    pub time: f64,
    /// Set when every time marginal underflowed and the prior weights were used.
    pub extrapolated: bool,
}

/// One point of the regression curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl BehaviorModel {
    /// Splits a 3-D `[t, α, T]` joint mixture into regression blocks.
    pub fn split_blocks(joint: &Mixture) -> Result<Self> {
        if joint.dimension() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: joint.dimension(),
            });
        }
        let mut components = Vec::with_capacity(joint.len());
        for (idx, c) in joint.components().iter().enumerate() {
            let m = &c.mean;
            let s = &c.covariance;
            let cov_t = s[(0, 0)];
            if !(cov_t > 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "component {idx} has non-positive time variance {cov_t}; unusable for regression"
                )));
            }
            let cov_ut = Vector2::new(s[(1, 0)], s[(2, 0)]);
            let cov_tu = Vector2::new(s[(0, 1)], s[(0, 2)]);
            let scale = s.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if (cov_ut - cov_tu).amax() > 1e-12 * scale {
                return Err(Error::InvalidMixture(format!(
                    "component {idx}: cross-covariance blocks are not transposes"
                )));
            }
            let cov_u = Matrix2::new(s[(1, 1)], s[(1, 2)], s[(2, 1)], s[(2, 2)]);
            let gain = cov_ut / cov_t;
            // entrywise v_i v_j / σ keeps the Schur complement exactly symmetric
            let correction = Matrix2::from_fn(|i, j| cov_ut[i] * cov_ut[j] / cov_t);
            let log_w = if c.weight > 0.0 {
                c.weight.ln()
            } else {
                f64::NEG_INFINITY
            };
            components.push(BehaviorComponent {
                weight: c.weight,
                mean_u: Vector2::new(m[1], m[2]),
                mean_t: m[0],
                cov_u,
                cov_t,
                cov_ut,
                gain,
                conditional_cov: cov_u - correction,
                log_time_scale: log_w - 0.5 * (2.0 * std::f64::consts::PI * cov_t).ln(),
            });
        }
        Ok(Self {
            components,
            joint: joint.clone(),
        })
    }

    pub fn components(&self) -> &[BehaviorComponent] {
        &self.components
    }

    pub fn joint(&self) -> &Mixture {
        &self.joint
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::split_blocks(&Mixture::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.joint.save(path)
    }

    /// Normalized conditional weights `π̂_i(t)`, plus the extrapolation flag.
    pub fn conditional_weights(&self, t: f64) -> Result<(Vec<f64>, bool)> {
        if !t.is_finite() {
            return Err(Error::NonFinite("conditioning time"));
        }
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_time_weight(t))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max >= LOG_UNDERFLOW) {
            return Ok((self.components.iter().map(|c| c.weight).collect(), true));
        }
        let total = log_sum_exp(logs.iter().copied());
        Ok((logs.iter().map(|l| (l - total).exp()).collect(), false))
    }

    /// The conditional input mixture `P(u | t)`.
    pub fn condition_on_time(&self, t: f64) -> Result<InputDistribution> {
        let (weights, extrapolated) = self.conditional_weights(t)?;
        let components = self
            .components
            .iter()
            .zip(weights)
            .map(|(c, w)| {
                let mean = c.conditional_mean(t);
                GaussianComponent::new(
                    w,
                    DVector::from_column_slice(mean.as_slice()),
                    DMatrix::from_column_slice(2, 2, c.conditional_cov.as_slice()),
                )
            })
            .collect();
        Ok(InputDistribution {
            mixture: Mixture::new(components)?,
            time: t,
            extrapolated,
        })
    }

    /// Overall conditional mean and per-channel standard deviation on a time grid.
    pub fn regression_curve(&self, t0: f64, t1: f64, dt: f64) -> Result<Vec<CurvePoint>> {
        if !(dt > 0.0) || !(t0 <= t1) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "bad curve grid t0={t0} t1={t1} dt={dt}"
            )));
        }
        let n = ((t1 - t0) / dt + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| {
                let t = t0 + k as f64 * dt;
                let (mean, cov) = self.condition_on_time(t)?.mixture.moments();
                Ok(CurvePoint {
                    t,
                    mean: [mean[0], mean[1]],
                    std: [cov[(0, 0)].max(0.0).sqrt(), cov[(1, 1)].max(0.0).sqrt()],
                })
            })
            .collect()
    }
}

/// `t,mean_alpha,mean_T,std_alpha,std_T` rows.
pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("t,mean_alpha,mean_T,std_alpha,std_T\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.t, p.mean[0], p.mean[1], p.std[0], p.std[1]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joint(components: &[(f64, [f64; 3], [f64; 9])]) -> Mixture {
        Mixture::new(
            components
                .iter()
                .map(|(w, m, c)| {
                    GaussianComponent::new(
                        *w,
                        DVector::from_column_slice(m),
                        DMatrix::from_row_slice(3, 3, c),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn diagonal_joint_has_no_cross_terms() {
        let bm = BehaviorModel::split_blocks(&joint(&[
            (
                0.5,
                [1.0, 0.1, 0.2],
                [0.3, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.2],
            ),
            (
                0.5,
                [3.0, -0.1, 0.5],
                [0.4, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.1],
            ),
        ]))
        .unwrap();
        for c in bm.components() {
            assert_eq!(c.cov_ut, Vector2::zeros());
        }
        for t in [-1.0, 0.0, 2.0, 7.5] {
            let d = bm.condition_on_time(t).unwrap();
            assert_eq!(d.mixture.components()[0].mean.as_slice(), &[0.1, 0.2]);
            assert_eq!(d.mixture.components()[1].mean.as_slice(), &[-0.1, 0.5]);
        }
    }

    #[test]
    fn blocks_match_written_submatrices() {
        let cov = [2.0, 0.3, -0.4, 0.3, 1.0, 0.1, -0.4, 0.1, 3.0];
        let bm = BehaviorModel::split_blocks(&joint(&[(1.0, [1.5, 0.2, -0.7], cov)])).unwrap();
        let c = &bm.components()[0];
        assert_eq!(c.mean_t, 1.5);
        assert_eq!(c.mean_u, Vector2::new(0.2, -0.7));
        assert_eq!(c.cov_t, 2.0);
        assert_eq!(c.cov_ut, Vector2::new(0.3, -0.4));
        assert_eq!(c.cov_u, Matrix2::new(1.0, 0.1, 0.1, 3.0));
    }

    #[test]
    fn rejects_wrong_dimension_and_degenerate_time() {
        let two_d = Mixture::single(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(BehaviorModel::split_blocks(&two_d).is_err());
        let flat = joint(&[(1.0, [0.0; 3], [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])]);
        assert!(BehaviorModel::split_blocks(&flat).is_err());
    }

    #[test]
    fn far_extrapolation_falls_back_to_prior_weights() {
        let bm = BehaviorModel::split_blocks(&joint(&[
            (
                0.25,
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            ),
            (
                0.75,
                [1.0, 1.0, 1.0],
                [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            ),
        ]))
        .unwrap();
        let near = bm.condition_on_time(30.0).unwrap();
        assert!(!near.extrapolated);
        assert!(near.mixture.weights()[1] > 0.99);
        let far = bm.condition_on_time(1e4).unwrap();
        assert!(far.extrapolated);
        assert_eq!(far.mixture.weights(), vec![0.25, 0.75]);
        assert!(bm.condition_on_time(f64::NAN).is_err());
    }

    #[test]
    fn curve_over_training_window_has_113_points() {
        let bm = BehaviorModel::split_blocks(&joint(&[(
            1.0,
            [2.0, 0.1, 0.4],
            [1.0, 0.0, 0.0, 0.0, 0.04, 0.0, 0.0, 0.0, 0.09],
        )]))
        .unwrap();
        let curve = bm.regression_curve(0.0, 4.5, 0.04).unwrap();
        assert_eq!(curve.len(), 113);
        for p in &curve {
            assert_eq!(p.mean, [0.1, 0.4]);
            assert!((p.std[0] - 0.2).abs() < 1e-15 && (p.std[1] - 0.3).abs() < 1e-15);
        }
        assert!(curve_to_csv(&curve).starts_with("t,mean_alpha,mean_T,std_alpha,std_T\n0,0.1,0.4,"));
        assert!(bm.regression_curve(1.0, 0.0, 0.1).is_err());
        assert!(bm.regression_curve(0.0, 1.0, 0.0).is_err());
    }
}
