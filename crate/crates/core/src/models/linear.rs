//! Linear-Gaussian model on R^n, where the filter must reduce to the
//! textbook Kalman filter.

use nalgebra::{DMatrix, DVector};

use crate::filter::SystemModel;
use crate::manifold::{Manifold, ManifoldError, StatePoint};

/// `x' = x + dt (A x + B u + w)`, `z = H x + v`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    manifold: Manifold,
    pub dt: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(
        dt: f64,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, ManifoldError> {
        let n = a.nrows();
        let manifold = Manifold::euclidean(n)?;
        let m = h.nrows();
        let checks = [
            ("A columns", n, a.ncols()),
            ("B rows", n, b.nrows()),
            ("H columns", n, h.ncols()),
            ("Q rows", n, q.nrows()),
            ("Q columns", n, q.ncols()),
            ("R rows", m, r.nrows()),
            ("R columns", m, r.ncols()),
        ];
        for (what, expected, actual) in checks {
            if expected != actual {
                return Err(ManifoldError::DimensionMismatch { what, expected, actual });
            }
        }
        Ok(LinearModel { manifold, dt, a, b, h, q, r })
    }

    /// Discrete transition matrix `I + dt A`.
    pub fn transition(&self) -> DMatrix<f64> {
        DMatrix::identity(self.a.nrows(), self.a.nrows()) + &self.a * self.dt
    }
}

impl SystemModel for LinearModel {
    type Input = DVector<f64>;
    type Context = ();

    fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn noise_dim(&self) -> usize {
        self.a.nrows()
    }

    fn f(&self, x: &StatePoint, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x.as_vector() + &self.b * u + w
    }

    fn df_dx(&self, _x: &StatePoint, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }

    fn df_dw(&self, _x: &StatePoint, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.a.nrows(), self.a.nrows())
    }

    fn process_noise(&self) -> DMatrix<f64> {
        self.q.clone()
    }

    fn measurement_dim(&self, _ctx: &()) -> usize {
        self.h.nrows()
    }

    fn measurement_noise_dim(&self, _ctx: &()) -> usize {
        self.h.nrows()
    }

    fn h(&self, x: &StatePoint, v: &DVector<f64>, _ctx: &()) -> DVector<f64> {
        &self.h * x.as_vector() + v
    }

    fn dh_dx(&self, _x: &StatePoint, _ctx: &()) -> DMatrix<f64> {
        self.h.clone()
    }

    fn dh_dv(&self, _x: &StatePoint, _ctx: &()) -> DMatrix<f64> {
        DMatrix::identity(self.h.nrows(), self.h.nrows())
    }

    fn measurement_noise(&self, _ctx: &()) -> DMatrix<f64> {
        self.r.clone()
    }
}
