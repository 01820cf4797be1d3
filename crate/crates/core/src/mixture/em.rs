//! Expectation-maximization for full-covariance Gaussian mixtures.
//!
//! Initialization is k-means++ seeding followed by one hard assignment. The
//! E-step evaluates per-point log densities through [`Execution`]; all sums
//! run sequentially in data order, so results do not depend on the thread
//! count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{log_sum_exp, GaussianComponent, Mixture, PreparedGaussian};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::rng;

/// Component mass below which a cluster counts as empty.
const EMPTY_CLUSTER_MASS: f64 = 1e-10;

/// Diagonal regularization added to every covariance after each M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceFloor {
    /// Multiple of the data variance of each dimension.
    Relative(f64),
    /// The same absolute value on every diagonal entry.
    Absolute(f64),
}

impl Default for CovarianceFloor {
    fn default() -> Self {
        CovarianceFloor::Relative(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub num_components: usize,
    pub max_iterations: usize,
    /// Stop when the relative log-likelihood change over one iteration falls below this.
    pub log_likelihood_tolerance: f64,
    pub covariance_floor: CovarianceFloor,
    pub seed: u64,
    pub execution: Execution,
}

impl EmConfig {
    pub fn new(num_components: usize) -> Self {
        Self {
            num_components,
            max_iterations: 500,
            log_likelihood_tolerance: 1e-6,
            covariance_floor: CovarianceFloor::default(),
            seed: 0,
            execution: Execution::default(),
        }
    }

    fn validate(&self, n_points: usize) -> Result<()> {
        if self.num_components == 0 {
            return Err(Error::InvalidConfig(
                "numComponents must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "maxIterations must be positive".into(),
            ));
        }
        if !(self.log_likelihood_tolerance > 0.0) {
            return Err(Error::InvalidConfig(
                "logLikelihoodTolerance must be > 0".into(),
            ));
        }
        let floor = match self.covariance_floor {
            CovarianceFloor::Relative(v) | CovarianceFloor::Absolute(v) => v,
        };
        if !(floor >= 0.0) || !floor.is_finite() {
            return Err(Error::InvalidConfig("covarianceFloor must be >= 0".into()));
        }
        if self.num_components > n_points {
            return Err(Error::InvalidConfig(format!(
                "numComponents ({}) exceeds the number of data points ({n_points})",
                self.num_components
            )));
        }
        Ok(())
    }
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    /// Fitted mixture, components sorted by descending weight.
    pub mixture: Mixture,
    /// Number of M-steps performed.
    pub iterations: usize,
    /// Total data log-likelihood under `mixture`.
    pub log_likelihood: f64,
    /// Log-likelihood of the initial parameters followed by one entry per M-step.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Indices into `history` whose parameters came out of an empty-cluster rescue.
    pub rescued: Vec<usize>,
}

/// Fits a `cfg.num_components` mixture to `data` by EM.
pub fn fit_em(data: &[DVector<f64>], cfg: &EmConfig) -> Result<EmFit> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidConfig("EM needs at least one data point".into()))?;
    let d = first.len();
    for x in data {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EM data"));
        }
    }
    cfg.validate(data.len())?;

    let n = data.len();
    let data_var = per_dimension_variance(data);
    let floor: DVector<f64> = match cfg.covariance_floor {
        CovarianceFloor::Absolute(v) => DVector::from_element(d, v),
        CovarianceFloor::Relative(r) => data_var.map(|v| if v > 0.0 { r * v } else { r }),
    };
    let fallback_cov = DMatrix::from_diagonal(&data_var.map(|v| if v > 0.0 { v } else { 1.0 }))
        + DMatrix::from_diagonal(&floor);

    let mut params = kmeans_pp_init(data, cfg.num_components, cfg.seed, &floor, &fallback_cov);

    let mut history = Vec::new();
    let mut rescued = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut resp = vec![0.0; n * cfg.num_components];

    loop {
        let point_ll = e_step(data, &params, cfg.execution, &mut resp);
        let ll: f64 = point_ll.iter().sum();
        if !ll.is_finite() {
            return Err(Error::Numeric("EM log-likelihood is not finite".into()));
        }
        let previous = history.last().copied();
        history.push(ll);
        if let Some(prev) = previous {
            let scale = if prev != 0.0 { prev.abs() } else { 1.0 };
            if (ll - prev).abs() < cfg.log_likelihood_tolerance * scale {
                converged = true;
                break;
            }
        }
        if iterations == cfg.max_iterations {
            break;
        }
        let empties = m_step(data, &resp, &floor, &mut params);
        if !empties.is_empty() {
            rescue_empty(data, &point_ll, &empties, &fallback_cov, &mut params);
            rescued.push(history.len());
        }
        iterations += 1;
    }

    let mixture = Mixture::new(params)?.sorted_by_weight();
    Ok(EmFit {
        log_likelihood: *history.last().expect("at least one E-step"),
        mixture,
        iterations,
        history,
        converged,
        rescued,
    })
}

fn per_dimension_variance(data: &[DVector<f64>]) -> DVector<f64> {
    let n = data.len() as f64;
    let d = data[0].len();
    let mut mean = DVector::zeros(d);
    for x in data {
        mean += x;
    }
    mean /= n;
    let mut var = DVector::zeros(d);
    for x in data {
        let diff = x - &mean;
        var += diff.component_mul(&diff);
    }
    var / n
}

fn squared_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_init(
    data: &[DVector<f64>],
    k: usize,
    seed: u64,
    floor: &DVector<f64>,
    fallback_cov: &DMatrix<f64>,
) -> Vec<GaussianComponent> {
    let n = data.len();
    let mut rng = rng::stream(seed, 0);
    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = data
        .iter()
        .map(|x| squared_distance(x, &data[centers[0]]))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d2) in nearest.iter().enumerate() {
                acc += d2;
                if target < acc && d2 > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| nearest.iter().rposition(|&d2| d2 > 0.0).unwrap_or(0))
        } else {
            // every point coincides with a center: pick unused indices in order
            (0..n).find(|i| !centers.contains(i)).unwrap_or(0)
        };
        centers.push(next);
        for (i, x) in data.iter().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(x, &data[next]));
        }
    }

    // hard assignment to the nearest center, ties to the lowest index
    let d = data[0].len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, x) in data.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, &ci) in centers.iter().enumerate() {
            let dist = squared_distance(x, &data[ci]);
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        members[best].push(i);
    }
    let floor_m = DMatrix::from_diagonal(floor);
    centers
        .iter()
        .zip(&members)
        .map(|(&ci, idx)| {
            if idx.len() < 2 {
                let w = idx.len().max(1) as f64 / n as f64;
                return GaussianComponent::new(w, data[ci].clone(), fallback_cov.clone());
            }
            let m = idx.len() as f64;
            let mut mean = DVector::zeros(d);
            for &i in idx {
                mean += &data[i];
            }
            mean /= m;
            let mut cov = DMatrix::zeros(d, d);
            for &i in idx {
                cov += linalg::outer(&(&data[i] - &mean));
            }
            cov /= m;
            GaussianComponent::new(m / n as f64, mean, cov + &floor_m)
        })
        .collect()
}

fn prepare(params: &[GaussianComponent]) -> Vec<PreparedGaussian> {
    params
        .iter()
        .map(|c| {
            let lower = regularized_cholesky_lower(&c.covariance);
            let log_w = if c.weight > 0.0 {
                c.weight.ln()
            } else {
                f64::NEG_INFINITY
            };
            PreparedGaussian::from_cholesky(&c.mean, lower, log_w)
        })
        .collect()
}

/// Cholesky factor, adding growing diagonal jitter until the matrix factors.
fn regularized_cholesky_lower(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = linalg::cholesky(cov) {
        return chol.l();
    }
    let d = cov.nrows();
    let scale = (cov.trace() / d as f64).abs().max(1e-300);
    let mut jitter = 1e-12 * scale;
    loop {
        let m = cov + DMatrix::identity(d, d) * jitter;
        if let Some(chol) = linalg::cholesky(&m) {
            return chol.l();
        }
        jitter *= 10.0;
    }
}

/// Fills `resp` (row-major n×k) and returns per-point log-likelihoods.
fn e_step(
    data: &[DVector<f64>],
    params: &[GaussianComponent],
    execution: Execution,
    resp: &mut [f64],
) -> Vec<f64> {
    let k = params.len();
    let prepared = prepare(params);
    let rows = execution.map_slice(data, |x| {
        let logs: Vec<f64> = prepared.iter().map(|p| p.log_pdf(x)).collect();
        let total = log_sum_exp(logs.iter().copied());
        let r: Vec<f64> = logs.iter().map(|&l| (l - total).exp()).collect();
        (total, r)
    });
    let mut point_ll = Vec::with_capacity(data.len());
    for (i, (total, r)) in rows.into_iter().enumerate() {
        resp[i * k..(i + 1) * k].copy_from_slice(&r);
        point_ll.push(total);
    }
    point_ll
}

/// Updates parameters in place; returns indices of empty components.
fn m_step(
    data: &[DVector<f64>],
    resp: &[f64],
    floor: &DVector<f64>,
    params: &mut [GaussianComponent],
) -> Vec<usize> {
    let n = data.len();
    let k = params.len();
    let d = data[0].len();
    let floor_m = DMatrix::from_diagonal(floor);
    let mut empties = Vec::new();
    for (j, comp) in params.iter_mut().enumerate() {
        let mass: f64 = (0..n).map(|i| resp[i * k + j]).sum();
        if mass < EMPTY_CLUSTER_MASS {
            empties.push(j);
            continue;
        }
        let mut mean = DVector::zeros(d);
        for (i, x) in data.iter().enumerate() {
            mean.axpy(resp[i * k + j], x, 1.0);
        }
        mean /= mass;
        let mut cov = DMatrix::zeros(d, d);
        for (i, x) in data.iter().enumerate() {
            let r = resp[i * k + j];
            if r == 0.0 {
                continue;
            }
            let diff = x - &mean;
            cov += linalg::outer(&diff) * r;
        }
        cov /= mass;
        comp.weight = mass / n as f64;
        comp.mean = mean;
        comp.covariance = cov + &floor_m;
    }
    empties
}

/// Re-seeds each empty component at the worst-explained datum.
fn rescue_empty(
    data: &[DVector<f64>],
    point_ll: &[f64],
    empties: &[usize],
    fallback_cov: &DMatrix<f64>,
    params: &mut [GaussianComponent],
) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]).then(a.cmp(&b)));
    let n = data.len() as f64;
    for (slot, &j) in empties.iter().enumerate() {
        let idx = order[slot % order.len()];
        params[j] = GaussianComponent::new(1.0 / n, data[idx].clone(), fallback_cov.clone());
    }
    let total: f64 = params.iter().map(|c| c.weight).sum();
    for c in params.iter_mut() {
        c.weight /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> Vec<DVector<f64>> {
        (0..50)
            .map(|i| DVector::from_vec(vec![i as f64 * 0.1, (i as f64 * 0.37).sin()]))
            .collect()
    }

    #[test]
    fn rejects_bad_configs() {
        let data = line_data();
        assert!(fit_em(&data, &EmConfig::new(0)).is_err());
        assert!(fit_em(&data, &EmConfig::new(51)).is_err());
        assert!(fit_em(&[], &EmConfig::new(1)).is_err());
        let mut cfg = EmConfig::new(2);
        cfg.covariance_floor = CovarianceFloor::Absolute(-1.0);
        assert!(fit_em(&data, &cfg).is_err());
    }

    #[test]
    fn one_component_is_closed_form() {
        let data = line_data();
        let mut cfg = EmConfig::new(1);
        cfg.covariance_floor = CovarianceFloor::Absolute(0.0);
        let fit = fit_em(&data, &cfg).unwrap();
        let n = data.len() as f64;
        let mean = data.iter().fold(DVector::zeros(2), |acc, x| acc + x) / n;
        let cov = data.iter().fold(DMatrix::zeros(2, 2), |acc, x| {
            acc + linalg::outer(&(x - &mean))
        }) / n;
        let c = &fit.mixture.components()[0];
        assert!((&c.mean - &mean).amax() < 1e-12);
        assert!((&c.covariance - &cov).amax() < 1e-8);
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let data: Vec<DVector<f64>> = (0..10)
            .map(|i| DVector::from_element(1, (i / 5) as f64))
            .collect();
        let mut cfg = EmConfig::new(4);
        cfg.covariance_floor = CovarianceFloor::Absolute(1e-3);
        let fit = fit_em(&data, &cfg).unwrap();
        assert_eq!(fit.mixture.len(), 4);
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let data = line_data();
        let mut cfg = EmConfig::new(3);
        cfg.execution = Execution::Sequential;
        let a = fit_em(&data, &cfg).unwrap();
        cfg.execution = Execution::Parallel;
        let b = fit_em(&data, &cfg).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.history, b.history);
    }
}
