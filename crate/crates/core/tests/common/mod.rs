#![allow(dead_code)]

use driftlab::{Model, ModelParams};
use nalgebra::{DMatrix, DVector};

/// `a a^T + shift I` from row-major entries.
pub fn spd(d: usize, entries: &[f64], shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(d, d, &entries[..d * d]);
    &a * a.transpose() + DMatrix::identity(d, d) * shift
}

/// A valid `d`-asset model built from a flat pool of numbers in [-1, 1].
pub fn model_from(d: usize, pool: &[f64], lambda: f64, theta: f64) -> Model {
    let n = d * d;
    let take = |k: usize| &pool[k * n..(k + 1) * n];
    let kappa = spd(d, take(0), 0.5);
    let sigma_mu = DMatrix::from_row_slice(d, d, take(1)) * 0.3;
    let sigma_r = spd(d, take(2), 0.2);
    let gamma = spd(d, take(3), 0.05) * 0.1;
    let q0 = spd(d, take(4), 0.0) * 0.01;
    let m0 = DVector::from_iterator(d, pool[5 * n..5 * n + d].iter().map(|x| 0.1 * x));
    Model::new(ModelParams {
        d,
        d1: 0,
        d2: 0,
        kappa,
        mu_bar: m0.clone(),
        sigma_mu,
        sigma_r,
        gamma,
        lambda,
        theta,
        horizon: 1.0,
        m0,
        q0,
        x0: 1.0,
        drift_init_mean: None,
        drift_init_cov: None,
    })
    .expect("valid random model")
}

pub fn pool_len(d: usize) -> usize {
    5 * d * d + d
}
