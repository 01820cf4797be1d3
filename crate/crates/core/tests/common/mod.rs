#![allow(dead_code)]

use gmreach::{GaussianComponent, Mixture};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Random SPD matrix `L Lᵀ + 0.05 I` with `L` standard normal, scaled.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, scale: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = (&l * l.transpose() / d as f64 + DMatrix::identity(d, d) * 0.05) * scale;
    0.5 * (&m + m.transpose())
}

pub fn random_mixture<R: Rng>(rng: &mut R, d: usize, n: usize) -> Mixture {
    let components = (0..n)
        .map(|_| {
            let w = rng.random_range(0.05..1.0);
            let mean = DVector::from_fn(d, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            let scale = rng.random_range(0.2..2.0);
            GaussianComponent::new(w, mean, random_spd(rng, d, scale))
        })
        .collect();
    Mixture::new(components).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
