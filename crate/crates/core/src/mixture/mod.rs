//! Gaussian mixtures: representation, density, sampling, moments and EM fitting.

mod em;

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::rng;

pub use em::{fit_em, CovarianceFloor, EmConfig, EmFit};

/// Weight tolerance for the "weights sum to one" invariant.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// One weighted Gaussian component.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self {
            weight,
            mean,
            covariance,
        }
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    /// Log of the normal pdf at `x`, ignoring the weight.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = linalg::cholesky(&self.covariance)
            .ok_or(Error::NotPositiveDefinite { component: 0 })?;
        Ok(PreparedGaussian::from_cholesky(&self.mean, chol.l(), 0.0).log_pdf(x))
    }
}

/// A finite Gaussian mixture with normalized weights.
///
/// Values are immutable after construction; all components share one
/// dimension and covariances are stored exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    components: Vec<GaussianComponent>,
    dimension: usize,
}

impl Mixture {
    /// Validates and normalizes `components`.
    ///
    /// Covariances must be symmetric to a relative 1e-12 and positive
    /// semi-definite up to round-off; weights must be non-negative with a
    /// positive sum.
    pub fn new(mut components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components.first().ok_or_else(|| {
            Error::InvalidMixture("a mixture needs at least one component".into())
        })?;
        let dimension = first.mean.len();
        if dimension == 0 {
            return Err(Error::InvalidMixture("zero-dimensional component".into()));
        }
        let mut total = 0.0;
        for (idx, c) in components.iter_mut().enumerate() {
            if c.mean.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: c.mean.len(),
                });
            }
            if c.covariance.nrows() != dimension || c.covariance.ncols() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: c.covariance.nrows().max(c.covariance.ncols()),
                });
            }
            if !c.weight.is_finite() || c.weight < 0.0 {
                return Err(Error::InvalidMixture(format!(
                    "component {idx} has invalid weight {}",
                    c.weight
                )));
            }
            if c.mean
                .iter()
                .chain(c.covariance.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite("mixture component"));
            }
            if !linalg::is_symmetric(&c.covariance) {
                return Err(Error::InvalidMixture(format!(
                    "covariance of component {idx} is not symmetric"
                )));
            }
            c.covariance = linalg::symmetrize(&c.covariance);
            let scale = linalg::max_abs(&c.covariance);
            if scale > 0.0 && linalg::min_eigenvalue(&c.covariance) < -1e-9 * scale.max(1.0) {
                return Err(Error::InvalidMixture(format!(
                    "covariance of component {idx} is not positive semi-definite"
                )));
            }
            total += c.weight;
        }
        if !(total > 0.0) {
            return Err(Error::InvalidMixture("weights sum to zero".into()));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self {
            components,
            dimension,
        })
    }

    /// Single Gaussian with weight one.
    pub fn single(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![GaussianComponent::new(1.0, mean, covariance)])
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Log-density via log-sum-exp; stays finite far into the tails.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.evaluator()?.log_density(x)
    }

    /// Prepares Cholesky factors once for repeated density evaluation.
    pub fn evaluator(&self) -> Result<DensityEvaluator> {
        DensityEvaluator::new(self)
    }

    /// Mean and covariance of the whole mixture.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dimension;
        let mut mean = DVector::zeros(d);
        for c in &self.components {
            mean.axpy(c.weight, &c.mean, 1.0);
        }
        let mut cov = DMatrix::zeros(d, d);
        for c in &self.components {
            let diff = &c.mean - &mean;
            cov += (&c.covariance + linalg::outer(&diff)) * c.weight;
        }
        (mean, cov)
    }

    /// Draws `n` vectors; draw `i` uses its own random stream under `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        self.sample_with(n, seed, Execution::default())
    }

    pub fn sample_with(&self, n: usize, seed: u64, execution: Execution) -> Vec<DVector<f64>> {
        let sampler = Sampler::new(self);
        execution.map_range(n, |i| {
            let mut rng = rng::stream(seed, i as u64);
            sampler.draw(&mut rng)
        })
    }

    /// Marginal over the listed coordinates (exact for Gaussian mixtures).
    pub fn marginal(&self, coords: &[usize]) -> Result<Mixture> {
        if let Some(&bad) = coords.iter().find(|&&c| c >= self.dimension) {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: bad + 1,
            });
        }
        let k = coords.len();
        let components = self
            .components
            .iter()
            .map(|c| {
                GaussianComponent::new(
                    c.weight,
                    DVector::from_fn(k, |i, _| c.mean[coords[i]]),
                    DMatrix::from_fn(k, k, |i, j| c.covariance[(coords[i], coords[j])]),
                )
            })
            .collect();
        Mixture::new(components)
    }

    /// Components sorted by descending weight (stable for ties).
    pub fn sorted_by_weight(&self) -> Mixture {
        let mut components = self.components.clone();
        components.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        Mixture {
            components,
            dimension: self.dimension,
        }
    }

    pub fn to_file(&self) -> MixtureFile {
        MixtureFile {
            dimension: self.dimension,
            components: self
                .components
                .iter()
                .map(|c| ComponentFile {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    covariance: linalg::matrix_to_rows(&c.covariance),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &MixtureFile) -> Result<Self> {
        let mut components = Vec::with_capacity(file.components.len());
        for c in &file.components {
            if c.mean.len() != file.dimension {
                return Err(Error::DimensionMismatch {
                    expected: file.dimension,
                    found: c.mean.len(),
                });
            }
            let cov = linalg::matrix_from_rows(&c.covariance)
                .ok_or_else(|| Error::InvalidMixture("ragged covariance rows".into()))?;
            components.push(GaussianComponent::new(
                c.weight,
                DVector::from_vec(c.mean.clone()),
                cov,
            ));
        }
        Mixture::new(components)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MixtureFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }
}

/// JSON layout of a mixture; covariance is stored full, row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureFile {
    pub dimension: usize,
    pub components: Vec<ComponentFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComponentFile {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedGaussian {
    mean: DVector<f64>,
    lower: DMatrix<f64>,
    /// `ln w - d/2 ln 2π - 1/2 ln det Σ`
    log_scale: f64,
}

impl PreparedGaussian {
    pub(crate) fn from_cholesky(mean: &DVector<f64>, lower: DMatrix<f64>, log_weight: f64) -> Self {
        let d = mean.len() as f64;
        let half_log_det: f64 = (0..lower.nrows()).map(|i| lower[(i, i)].ln()).sum();
        Self {
            mean: mean.clone(),
            lower,
            log_scale: log_weight - 0.5 * d * (2.0 * PI).ln() - half_log_det,
        }
    }

    pub(crate) fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let z = self
            .lower
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_scale - 0.5 * z.norm_squared()
    }
}

/// Mixture with cached factorizations for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct DensityEvaluator {
    parts: Vec<PreparedGaussian>,
    dimension: usize,
}

impl DensityEvaluator {
    pub fn new(mix: &Mixture) -> Result<Self> {
        let mut parts = Vec::with_capacity(mix.len());
        for (idx, c) in mix.components.iter().enumerate() {
            if c.weight == 0.0 {
                continue;
            }
            let chol = linalg::cholesky(&c.covariance)
                .ok_or(Error::NotPositiveDefinite { component: idx })?;
            parts.push(PreparedGaussian::from_cholesky(
                &c.mean,
                chol.l(),
                c.weight.ln(),
            ));
        }
        Ok(Self {
            parts,
            dimension: mix.dimension,
        })
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: x.len(),
            });
        }
        Ok(log_sum_exp(self.parts.iter().map(|p| p.log_pdf(x))))
    }

    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }
}

/// `ln Σ exp(v)`, with `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Precomputed categorical table and PSD factors for drawing from a mixture.
#[derive(Debug, Clone)]
pub struct Sampler {
    cumulative: Vec<f64>,
    means: Vec<DVector<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl Sampler {
    pub fn new(mix: &Mixture) -> Self {
        let mut acc = 0.0;
        let cumulative = mix
            .components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        Self {
            cumulative,
            means: mix.components.iter().map(|c| c.mean.clone()).collect(),
            factors: mix
                .components
                .iter()
                .map(|c| linalg::psd_factor(&c.covariance))
                .collect(),
        }
    }

    /// Picks a component index from the categorical weights.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty mixture");
        let u: f64 = rng.random::<f64>() * total;
        match self.cumulative.iter().position(|&c| u < c) {
            Some(i) => i,
            // u rounded onto the total: take the last component with mass
            None => self
                .cumulative
                .windows(2)
                .rposition(|w| w[1] > w[0])
                .map_or(0, |i| i + 1),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.pick(rng);
        self.draw_from(k, rng)
    }

    pub fn draw_from<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DVector<f64> {
        let d = self.means[k].len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.means[k] + &self.factors[k] * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gc(w: f64, mean: &[f64], cov: &[f64]) -> GaussianComponent {
        let d = mean.len();
        GaussianComponent::new(
            w,
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov),
        )
    }

    #[test]
    fn standard_normal_peak() {
        let m = Mixture::single(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(
            m.density(&DVector::zeros(2)).unwrap(),
            1.0 / (2.0 * PI),
            epsilon = 1e-15
        );
    }

    #[test]
    fn symmetric_pair_matches_single_component() {
        let mu = 1.3;
        let pair = Mixture::new(vec![
            gc(0.5, &[mu, 0.0], &[1.0, 0.2, 0.2, 2.0]),
            gc(0.5, &[-mu, 0.0], &[1.0, 0.2, 0.2, 2.0]),
        ])
        .unwrap();
        let single = Mixture::new(vec![gc(1.0, &[mu, 0.0], &[1.0, 0.2, 0.2, 2.0])]).unwrap();
        let origin = DVector::zeros(2);
        assert_relative_eq!(
            pair.density(&origin).unwrap(),
            single.density(&origin).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn scalar_mixture_against_direct_sum() {
        let m = Mixture::new(vec![gc(0.3, &[0.0], &[1.0]), gc(0.7, &[2.0], &[0.25])]).unwrap();
        let pdf = |x: f64, mu: f64, var: f64| {
            (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
        };
        let expected = 0.3 * pdf(1.0, 0.0, 1.0) + 0.7 * pdf(1.0, 2.0, 0.25);
        assert_relative_eq!(
            m.density(&DVector::from_element(1, 1.0)).unwrap(),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn log_density_survives_deep_tails() {
        let m = Mixture::single(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let x = DVector::from_element(1, 37.5);
        let ld = m.log_density(&x).unwrap();
        assert!(ld.is_finite());
        assert_relative_eq!(
            ld,
            -0.5 * 37.5_f64.powi(2) - 0.5 * (2.0 * PI).ln(),
            max_relative = 1e-14
        );
        let far = m.log_density(&DVector::from_element(1, 1e3)).unwrap();
        assert!(far.is_finite() && far < -4.9e5);
    }

    #[test]
    fn density_errors() {
        let m = Mixture::single(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(
            m.density(&DVector::zeros(3)),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        let singular = Mixture::new(vec![
            gc(0.5, &[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]),
            gc(0.5, &[0.0, 0.0], &[1.0, 1.0, 1.0, 1.0]),
        ])
        .unwrap();
        assert!(matches!(
            singular.density(&DVector::zeros(2)),
            Err(Error::NotPositiveDefinite { component: 1 })
        ));
    }

    #[test]
    fn construction_validates() {
        assert!(Mixture::new(vec![]).is_err());
        assert!(Mixture::new(vec![gc(-0.1, &[0.0], &[1.0])]).is_err());
        assert!(Mixture::new(vec![gc(1.0, &[0.0, 0.0], &[1.0, 0.5, 0.4, 1.0])]).is_err());
        assert!(Mixture::new(vec![gc(1.0, &[0.0], &[-1.0])]).is_err());
        let m = Mixture::new(vec![gc(2.0, &[0.0], &[1.0]), gc(6.0, &[1.0], &[1.0])]).unwrap();
        assert_eq!(m.weights(), vec![0.25, 0.75]);
    }

    #[test]
    fn moments_of_two_point_distribution() {
        let m = Mixture::new(vec![gc(0.5, &[1.0], &[0.0]), gc(0.5, &[-1.0], &[0.0])]).unwrap();
        let (mean, cov) = m.moments();
        assert_eq!(mean[0], 0.0);
        assert_eq!(cov[(0, 0)], 1.0);
        let single = Mixture::new(vec![gc(1.0, &[1.0, 2.0], &[2.0, 0.3, 0.3, 1.0])]).unwrap();
        let (mean, cov) = single.moments();
        assert_eq!(mean, single.components()[0].mean);
        assert_eq!(cov, single.components()[0].covariance);
    }

    #[test]
    fn zero_weight_component_is_never_sampled() {
        let m = Mixture::new(vec![gc(1.0, &[5.0], &[0.0]), gc(0.0, &[-5.0], &[1.0])]).unwrap();
        for x in m.sample(500, 3) {
            assert_eq!(x[0], 5.0);
        }
    }

    #[test]
    fn sample_mean_of_standard_normal() {
        let m = Mixture::single(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let xs = m.sample(10_000, 11);
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 4.0 / 100.0);
    }

    #[test]
    fn json_roundtrip_and_symmetry_validation() {
        let m = Mixture::new(vec![
            gc(0.4, &[0.1, -0.2], &[1.0, 0.3, 0.3, 0.5]),
            gc(0.6, &[1.0, 1.0], &[0.2, 0.0, 0.0, 0.2]),
        ])
        .unwrap();
        let back = Mixture::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = r#"{"dimension":2,"components":[{"weight":1,"mean":[0,0],"covariance":[[1,0.5],[0.1,1]]}]}"#;
        assert!(Mixture::from_json(bad).is_err());
        let ragged = r#"{"dimension":2,"components":[{"weight":1,"mean":[0,0],"covariance":[[1,0.5],[0.1]]}]}"#;
        assert!(Mixture::from_json(ragged).is_err());
    }

    #[test]
    fn marginal_extracts_blocks() {
        let m = Mixture::new(vec![gc(
            1.0,
            &[1.0, 2.0, 3.0],
            &[4.0, 0.1, 0.2, 0.1, 5.0, 0.3, 0.2, 0.3, 6.0],
        )])
        .unwrap();
        let marg = m.marginal(&[2, 0]).unwrap();
        assert_eq!(marg.components()[0].mean.as_slice(), &[3.0, 1.0]);
        assert_eq!(
            marg.components()[0].covariance,
            DMatrix::from_row_slice(2, 2, &[6.0, 0.2, 0.2, 4.0])
        );
        assert!(m.marginal(&[3]).is_err());
    }
}
