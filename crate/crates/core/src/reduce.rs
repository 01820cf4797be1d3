//! Greedy pairwise mixture reduction ranked by the K-L divergence upper bound.
//!
//! Each merge replaces the pair with the smallest bound by its
//! moment-matched Gaussian, so the mixture mean and covariance are preserved
//! exactly (up to round-off) by every reduction.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::mixture::{GaussianComponent, Mixture};

/// Diagonal added inside the bound when a covariance does not factor.
pub const KL_REGULARIZATION: f64 = 1e-12;

/// One merge performed by [`reduce_mixture`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MergeRecord {
    /// Indices in the mixture as it was right before this merge, `i < j`.
    pub pair: (usize, usize),
    pub kl_upper_bound: f64,
    /// Index of the merged component afterwards (always `pair.0`).
    pub result_index: usize,
}

fn identical(a: &GaussianComponent, b: &GaussianComponent) -> bool {
    a.mean == b.mean && a.covariance == b.covariance
}

/// Moment-matched merge of two weighted components.
pub fn merge_pair(a: &GaussianComponent, b: &GaussianComponent) -> Result<GaussianComponent> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let total = a.weight + b.weight;
    if !(total > 0.0) {
        return Err(Error::InvalidMixture(
            "cannot merge components with zero total weight".into(),
        ));
    }
    if identical(a, b) {
        return Ok(GaussianComponent::new(
            total,
            a.mean.clone(),
            a.covariance.clone(),
        ));
    }
    let fa = a.weight / total;
    let fb = b.weight / total;
    let mean = &a.mean * fa + &b.mean * fb;
    let spread = linalg::outer(&(&a.mean - &b.mean)) * (fa * fb);
    let covariance = &a.covariance * fa + &b.covariance * fb + spread;
    Ok(GaussianComponent::new(total, mean, covariance))
}

/// `½[(π_i+π_j) ln det Σ_ij − π_i ln det Σ_i − π_j ln det Σ_j]`.
///
/// If any of the three covariances fails to factor, all three get
/// [`KL_REGULARIZATION`] on the diagonal for this computation only.
pub fn kl_upper_bound(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let merged = merge_pair(a, b)?;
    if identical(a, b) {
        return Ok(0.0);
    }
    let plain = (
        linalg::log_det_pd(&merged.covariance),
        linalg::log_det_pd(&a.covariance),
        linalg::log_det_pd(&b.covariance),
    );
    let (ld_ab, ld_a, ld_b) = match plain {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            let d = a.dimension();
            let reg = DMatrix::identity(d, d) * KL_REGULARIZATION;
            let ld = |m: &DMatrix<f64>, component: usize| {
                linalg::log_det_pd(&(m + &reg)).ok_or(Error::NotPositiveDefinite { component })
            };
            (
                ld(&merged.covariance, 0)?,
                ld(&a.covariance, 0)?,
                ld(&b.covariance, 1)?,
            )
        }
    };
    Ok(0.5 * (merged.weight * ld_ab - a.weight * ld_a - b.weight * ld_b))
}

/// Reduces `mix` to at most `target` components with the default execution.
pub fn reduce_mixture(mix: &Mixture, target: usize) -> Result<(Mixture, Vec<MergeRecord>)> {
    reduce_mixture_with(mix, target, Execution::default())
}

/// Greedy reduction; pair scores are cached and only the row of the merged
/// component is rescored after each merge. Ties go to the lexicographically
/// smallest pair.
pub fn reduce_mixture_with(
    mix: &Mixture,
    target: usize,
    execution: Execution,
) -> Result<(Mixture, Vec<MergeRecord>)> {
    if target == 0 {
        return Err(Error::InvalidConfig(
            "reduction target must be at least 1".into(),
        ));
    }
    if mix.len() <= target {
        return Ok((mix.clone(), Vec::new()));
    }
    let mut comps: Vec<GaussianComponent> = mix.components().to_vec();
    let n = comps.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let scored = execution.map_slice(&pairs, |&(i, j)| kl_upper_bound(&comps[i], &comps[j]));
    let mut scores = vec![vec![f64::NAN; n]; n];
    for (&(i, j), s) in pairs.iter().zip(scored) {
        let s = s?;
        scores[i][j] = s;
        scores[j][i] = s;
    }

    let mut records = Vec::with_capacity(n - target);
    while comps.len() > target {
        let m = comps.len();
        let mut best = (0, 1);
        let mut best_score = f64::INFINITY;
        #[allow(clippy::needless_range_loop)] // upper triangle scan
        for i in 0..m {
            for j in (i + 1)..m {
                let s = scores[i][j];
                if s.is_nan() {
                    return Err(Error::Numeric(format!(
                        "K-L bound for pair ({i}, {j}) is NaN"
                    )));
                }
                if s < best_score {
                    best_score = s;
                    best = (i, j);
                }
            }
        }
        let (i, j) = best;
        comps[i] = merge_pair(&comps[i], &comps[j])?;
        comps.remove(j);
        scores.remove(j);
        for row in &mut scores {
            row.remove(j);
        }
        let fresh = execution.map_range(comps.len(), |k| {
            if k == i {
                Ok(f64::NAN)
            } else {
                kl_upper_bound(&comps[i], &comps[k])
            }
        });
        for (k, s) in fresh.into_iter().enumerate() {
            if k != i {
                let s = s?;
                scores[i][k] = s;
                scores[k][i] = s;
            }
        }
        records.push(MergeRecord {
            pair: best,
            kl_upper_bound: best_score,
            result_index: i,
        });
    }
    Ok((Mixture::new(comps)?, records))
}
