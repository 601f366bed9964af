//! Iterated error-state Kalman filter over any [`Manifold`].
//!
//! The covariance always lives in the tangent space of the current
//! estimate. Prediction propagates it through the discrete model, the
//! update iterates Gauss-Newton steps with the prior re-expressed at the
//! current iterate, and a final reset moves the covariance onto the
//! tangent space of the updated estimate.

mod model;

pub use model::SystemModel;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::manifold::{Manifold, ManifoldError, StatePoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("{what} has shape {actual:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("innovation covariance is not positive definite (condition estimate {condition:.3e})")]
    SingularInnovation { condition: f64 },
    #[error("covariance is not positive definite")]
    IndefiniteCovariance,
    #[error("measurement has no rows")]
    EmptyMeasurement,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Estimate and its covariance in the tangent space at the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: StatePoint,
    pub p: DMatrix<f64>,
}

impl FilterState {
    pub fn new(manifold: &Manifold, x: StatePoint, p: DMatrix<f64>) -> Result<Self, FilterError> {
        manifold.check_point(&x, crate::manifold::DEFAULT_POINT_TOL)?;
        let n = manifold.tangent_dim();
        check_shape("covariance", (n, n), p.shape())?;
        check_finite("covariance", &p)?;
        Ok(FilterState { x, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig {
    /// Extra iterations after the first; zero gives a single EKF update.
    pub max_iterations: usize,
    /// Iteration stops once the step norm drops below this.
    pub tolerance: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig { max_iterations: 4, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    /// Number of gain computations performed.
    pub iterations: usize,
    pub converged: bool,
    pub step_norms: Vec<f64>,
    pub residual_norms: Vec<f64>,
    /// Largest innovation covariance condition estimate seen.
    pub innovation_condition: f64,
    /// Frobenius distance of the final reset Jacobian from the identity.
    pub reset_deviation: f64,
}

fn check_shape(what: &'static str, expected: (usize, usize), actual: (usize, usize)) -> Result<(), FilterError> {
    if expected == actual {
        Ok(())
    } else {
        Err(FilterError::Shape { what, expected, actual })
    }
}

fn check_finite(what: &'static str, m: &DMatrix<f64>) -> Result<(), FilterError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FilterError::NonFinite(what))
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// Jacobians of the discrete transition with respect to the state error and
/// the velocity, for a step `step = dt * f` taken from `x`.
pub fn transition_jacobians(
    manifold: &Manifold,
    x: &StatePoint,
    step: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), FilterError> {
    Ok(manifold.operator_jacobians(x, &DVector::zeros(manifold.tangent_dim()), step)?)
}

/// Maps a covariance at `prior` to the tangent space at `prior boxplus offset`.
pub fn prior_jacobian(manifold: &Manifold, prior: &StatePoint, offset: &DVector<f64>) -> Result<DMatrix<f64>, FilterError> {
    Ok(manifold.diff_u(prior, offset, &DVector::zeros(manifold.control_dim()))?)
}

/// Maps a covariance at `x` to the tangent space at `x boxplus step`.
pub fn reset_jacobian(manifold: &Manifold, x: &StatePoint, step: &DVector<f64>) -> Result<DMatrix<f64>, FilterError> {
    prior_jacobian(manifold, x, step)
}

/// Propagates `state` through one input sample.
pub fn predict<M: SystemModel + ?Sized>(model: &M, state: &FilterState, input: &M::Input) -> Result<FilterState, FilterError> {
    let m = model.manifold();
    let (n, c, q) = (m.tangent_dim(), m.control_dim(), model.noise_dim());
    let dt = model.dt();

    let vel = model.f(&state.x, input, &DVector::zeros(q));
    check_shape("velocity", (c, 1), vel.shape())?;
    if !vel.iter().all(|v| v.is_finite()) {
        return Err(FilterError::NonFinite("velocity"));
    }
    let fx = model.df_dx(&state.x, input);
    let fw = model.df_dw(&state.x, input);
    let qm = model.process_noise();
    check_shape("df_dx", (c, n), fx.shape())?;
    check_shape("df_dw", (c, q), fw.shape())?;
    check_shape("process noise", (q, q), qm.shape())?;

    let step = vel * dt;
    let x = m.oplus(&state.x, &step)?;
    let (gx, gf) = transition_jacobians(m, &state.x, &step)?;
    let f_x = gx + &gf * fx * dt;
    let f_w = gf * fw * dt;
    let mut p = &f_x * &state.p * f_x.transpose() + &f_w * qm * f_w.transpose();
    symmetrize(&mut p);
    check_finite("predicted covariance", &p)?;
    Ok(FilterState { x, p })
}

fn innovation_condition(s: &DMatrix<f64>) -> f64 {
    let eig = s.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition estimate from a Cholesky factor's diagonal.
fn cholesky_condition(l: &DMatrix<f64>) -> f64 {
    let d = l.diagonal();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    (max / min).powi(2)
}

/// Fuses measurement `z` into `prior`.
pub fn update<M: SystemModel + ?Sized>(
    model: &M,
    prior: &FilterState,
    z: &DVector<f64>,
    ctx: &M::Context,
    config: &UpdateConfig,
) -> Result<(FilterState, UpdateDiagnostics), FilterError> {
    if !(config.tolerance.is_finite() && config.tolerance > 0.0) {
        return Err(FilterError::InvalidConfig(format!("tolerance must be positive, got {}", config.tolerance)));
    }
    let m = model.manifold();
    let n = m.tangent_dim();
    let rows = model.measurement_dim(ctx);
    if rows == 0 {
        return Err(FilterError::EmptyMeasurement);
    }
    let nv = model.measurement_noise_dim(ctx);
    check_shape("measurement", (rows, 1), z.shape())?;
    if !z.iter().all(|v| v.is_finite()) {
        return Err(FilterError::NonFinite("measurement"));
    }
    let r = model.measurement_noise(ctx);
    check_shape("measurement noise", (nv, nv), r.shape())?;

    let mut x = prior.x.clone();
    let mut diag = UpdateDiagnostics {
        iterations: 0,
        converged: false,
        step_norms: Vec::new(),
        residual_norms: Vec::new(),
        innovation_condition: 0.0,
        reset_deviation: 0.0,
    };
    let mut last = None;

    for _ in 0..=config.max_iterations {
        let residual = z - model.h(&x, &DVector::zeros(nv), ctx);
        let hx = model.dh_dx(&x, ctx);
        let hv = model.dh_dv(&x, ctx);
        check_shape("dh_dx", (rows, n), hx.shape())?;
        check_shape("dh_dv", (rows, nv), hv.shape())?;
        check_finite("dh_dx", &hx)?;
        let r_eff = &hv * &r * hv.transpose();

        let offset = m.boxminus(&x, &prior.x)?;
        let j = prior_jacobian(m, &prior.x, &offset)?;
        let p_hat = &j * &prior.p * j.transpose();
        let hp = &hx * &p_hat;
        let mut s = &hp * hx.transpose() + r_eff;
        symmetrize(&mut s);
        check_finite("innovation covariance", &s)?;
        let chol = match s.clone().cholesky() {
            Some(c) => c,
            None => return Err(FilterError::SingularInnovation { condition: innovation_condition(&s) }),
        };
        diag.innovation_condition = diag.innovation_condition.max(cholesky_condition(&chol.l()));
        // K = P_hat H^T S^-1, computed as the transpose of S^-1 H P_hat.
        let gain = chol.solve(&hp).transpose();

        let j_offset = &j * &offset;
        let step = -&j_offset + &gain * (&residual + &hx * &j_offset);
        if !step.iter().all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite("update step"));
        }
        let step_norm = step.norm();
        let next = m.boxplus(&x, &step)?;
        diag.iterations += 1;
        diag.step_norms.push(step_norm);
        diag.residual_norms.push(residual.norm());
        last = Some((gain, hx, p_hat, step, std::mem::replace(&mut x, next)));
        if step_norm < config.tolerance {
            diag.converged = true;
            break;
        }
    }

    let (gain, hx, p_hat, step, linearized_at) = last.expect("at least one iteration runs");
    let mut p_post = &p_hat - &gain * (&hx * &p_hat);
    let l = reset_jacobian(m, &linearized_at, &step)?;
    diag.reset_deviation = (&l - DMatrix::identity(n, n)).norm();
    p_post = &l * p_post * l.transpose();
    symmetrize(&mut p_post);
    check_finite("updated covariance", &p_post)?;
    Ok((FilterState { x, p: p_post }, diag))
}

/// Owns a model and its running estimate.
#[derive(Debug, Clone)]
pub struct IteratedFilter<M> {
    model: M,
    state: FilterState,
    config: UpdateConfig,
}

impl<M: SystemModel> IteratedFilter<M> {
    pub fn new(model: M, state: FilterState, config: UpdateConfig) -> Result<Self, FilterError> {
        let m = model.manifold();
        m.check_point(&state.x, crate::manifold::DEFAULT_POINT_TOL)?;
        let n = m.tangent_dim();
        check_shape("covariance", (n, n), state.p.shape())?;
        Ok(IteratedFilter { model, state, config })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn config(&self) -> &UpdateConfig {
        &self.config
    }

    pub fn predict(&mut self, input: &M::Input) -> Result<(), FilterError> {
        self.state = predict(&self.model, &self.state, input)?;
        Ok(())
    }

    pub fn update(&mut self, z: &DVector<f64>, ctx: &M::Context) -> Result<UpdateDiagnostics, FilterError> {
        let (state, diag) = update(&self.model, &self.state, z, ctx, &self.config)?;
        self.state = state;
        Ok(diag)
    }

    /// Re-projects the estimate onto the manifold to clear roundoff.
    pub fn normalize(&mut self) {
        self.model.manifold().normalize(&mut self.state.x);
    }
}
