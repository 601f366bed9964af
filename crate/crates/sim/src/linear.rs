//! Linear-Gaussian tracking scenario for checking NEES calibration in
//! isolation from any linearization error.

use ikfom_core::filter::{self, FilterError, FilterState, SystemModel, UpdateConfig};
use ikfom_core::models::linear::LinearModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::trial::nees;

/// Planar constant-velocity target with position fixes.
pub fn constant_velocity(dt: f64) -> LinearModel {
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    let b = DMatrix::zeros(4, 1);
    let mut h = DMatrix::zeros(2, 4);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.01, 1.0, 1.0]));
    let r = DMatrix::identity(2, 2) * 0.25;
    LinearModel::new(dt, a, b, h, q, r).expect("consistent shapes")
}

fn gaussian(rng: &mut impl Rng, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().expect("positive definite").unpack();
    &l * DVector::from_fn(cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Mean NEES of one trial over `steps` predict-update cycles.
pub fn trial_nees(model: &LinearModel, steps: usize, seed: u64) -> Result<f64, FilterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.manifold().tangent_dim();
    let p0 = DMatrix::identity(n, n);
    let mut truth = gaussian(&mut rng, &p0);
    let mut state = FilterState::new(model.manifold(), ikfom_core::StatePoint::from_vec(DVector::zeros(n)), p0)?;
    let u = DVector::zeros(model.b.ncols());
    let mut total = 0.0;
    for _ in 0..steps {
        let w = gaussian(&mut rng, &model.q);
        truth = &truth + (&model.a * &truth + &w) * model.dt;
        let z = &model.h * &truth + gaussian(&mut rng, &model.r);
        state = filter::predict(model, &state, &u)?;
        state = filter::update(model, &state, &z, &(), &UpdateConfig::default())?.0;
        let e = &truth - state.x.as_vector();
        total += nees(&e, &state.p).ok_or(FilterError::IndefiniteCovariance)?;
    }
    Ok(total / steps as f64)
}

/// Average NEES over `trials` seeded runs; trial `i` uses `seed ^ i`.
pub fn monte_carlo_nees(model: &LinearModel, trials: usize, steps: usize, seed: u64) -> Result<f64, FilterError> {
    let per_trial: Result<Vec<f64>, FilterError> =
        (0..trials).into_par_iter().map(|i| trial_nees(model, steps, seed ^ i as u64)).collect();
    let per_trial = per_trial?;
    Ok(per_trial.iter().sum::<f64>() / trials as f64)
}
