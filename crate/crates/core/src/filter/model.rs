use nalgebra::{DMatrix, DVector};

use crate::manifold::{Manifold, StatePoint};

/// Discrete-time system `x' = x oplus (dt * f(x, u, w))`, `z = h(x, v)`
/// with white Gaussian `w ~ N(0, Q)` and `v ~ N(0, R)`.
///
/// Jacobians of `f` are taken with respect to the tangent error at `x` and
/// evaluated at zero noise. `Context` carries whatever varies between
/// measurement epochs, such as matched features.
pub trait SystemModel {
    type Input;
    type Context: ?Sized;

    fn manifold(&self) -> &Manifold;

    /// Sampling period of the input.
    fn dt(&self) -> f64;

    fn noise_dim(&self) -> usize;

    /// Velocity in control coordinates.
    fn f(&self, x: &StatePoint, u: &Self::Input, w: &DVector<f64>) -> DVector<f64>;

    /// `control_dim x tangent_dim`.
    fn df_dx(&self, x: &StatePoint, u: &Self::Input) -> DMatrix<f64>;

    /// `control_dim x noise_dim`.
    fn df_dw(&self, x: &StatePoint, u: &Self::Input) -> DMatrix<f64>;

    fn process_noise(&self) -> DMatrix<f64>;

    fn measurement_dim(&self, ctx: &Self::Context) -> usize;

    fn measurement_noise_dim(&self, ctx: &Self::Context) -> usize;

    fn h(&self, x: &StatePoint, v: &DVector<f64>, ctx: &Self::Context) -> DVector<f64>;

    /// `measurement_dim x tangent_dim`.
    fn dh_dx(&self, x: &StatePoint, ctx: &Self::Context) -> DMatrix<f64>;

    /// `measurement_dim x measurement_noise_dim`.
    fn dh_dv(&self, x: &StatePoint, ctx: &Self::Context) -> DMatrix<f64>;

    fn measurement_noise(&self, ctx: &Self::Context) -> DMatrix<f64>;
}
