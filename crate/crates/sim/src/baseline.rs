//! Quaternion filter on a flat state, the comparison baseline.
//!
//! Attitude and extrinsic rotation are unit quaternions stored as plain
//! 4-vectors and gravity is a free 3-vector. The generic filter runs on
//! R^26, so prediction integrates the quaternion rate additively and the
//! update moves the quaternion off the unit sphere. Both are undone by
//! rescaling after every step, without touching the covariance. The
//! pseudo-measurement variant also fuses unit-norm observations of each
//! constrained block with every scan.

use ikfom_core::filter::{self, FilterError, FilterState, SystemModel, UpdateConfig};
use ikfom_core::manifold::{so3, sphere, Manifold, StatePoint};
use ikfom_core::models::lidar_inertial::{noise, tangent, Feature, FeatureKind, ImuNoise, ImuSample, NavState};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, Matrix4x3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector4};

use crate::config::Normalization;

/// Offsets into the 26-dimensional baseline state.
pub mod layout {
    pub const POSITION: usize = 0;
    pub const VELOCITY: usize = 3;
    /// Attitude quaternion, scalar first.
    pub const ATTITUDE: usize = 6;
    pub const ACCEL_BIAS: usize = 10;
    pub const GYRO_BIAS: usize = 13;
    pub const GRAVITY: usize = 16;
    pub const EXT_ROTATION: usize = 19;
    pub const EXT_TRANSLATION: usize = 23;
    pub const DIM: usize = 26;
}

/// Standard deviation of the unit-norm pseudo-measurements.
pub const PSEUDO_STD: f64 = 1e-4;

/// Rotation matrix of a (not necessarily unit) quaternion, quadratic in `q`.
pub fn rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, v) = (q[0], q.fixed_rows::<3>(1).into_owned());
    Matrix3::identity() * (w * w - v.dot(&v)) + 2.0 * v * v.transpose() + 2.0 * w * so3::skew(&v)
}

/// Derivative of `rotation(q) * a` with respect to `q`.
pub fn rotation_derivative(q: &Vector4<f64>, a: &Vector3<f64>) -> Matrix3x4<f64> {
    let (w, v) = (q[0], q.fixed_rows::<3>(1).into_owned());
    let mut j = Matrix3x4::zeros();
    j.fixed_columns_mut::<1>(0).copy_from(&(2.0 * w * a + 2.0 * v.cross(a)));
    let dv = -2.0 * a * v.transpose() + 2.0 * v * a.transpose() + 2.0 * v.dot(a) * Matrix3::identity() - 2.0 * w * so3::skew(a);
    j.fixed_columns_mut::<3>(1).copy_from(&dv);
    j
}

/// `q ⊗ [0, w] = xi(q) * w`.
pub fn xi(q: &Vector4<f64>) -> Matrix4x3<f64> {
    let (w, v) = (q[0], q.fixed_rows::<3>(1).into_owned());
    let mut m = Matrix4x3::zeros();
    m.fixed_rows_mut::<1>(0).copy_from(&(-v.transpose()));
    m.fixed_rows_mut::<3>(1).copy_from(&(Matrix3::identity() * w + so3::skew(&v)));
    m
}

/// `q ⊗ [0, w] = omega(w) * q`.
fn omega(w: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<1, 3>(0, 1).copy_from(&(-w.transpose()));
    m.fixed_view_mut::<3, 1>(1, 0).copy_from(w);
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&(-so3::skew(w)));
    m
}

pub fn quaternion_of(r: &Matrix3<f64>) -> Vector4<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    Vector4::new(q.w, q.i, q.j, q.k)
}

fn unit_quaternion(q: &Vector4<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

fn put<const R: usize, const C: usize>(m: &mut DMatrix<f64>, row: usize, col: usize, block: &nalgebra::SMatrix<f64, R, C>) {
    m.view_mut((row, col), (R, C)).copy_from(block);
}

fn v3(x: &StatePoint, at: usize) -> Vector3<f64> {
    x.as_vector().fixed_rows::<3>(at).into_owned()
}

fn v4(x: &StatePoint, at: usize) -> Vector4<f64> {
    x.as_vector().fixed_rows::<4>(at).into_owned()
}

/// Measurement context: matched features plus whether to fuse the norm constraints.
#[derive(Debug, Clone)]
pub struct BaselineScan {
    pub features: Vec<Feature>,
    pub pseudo: bool,
}

const PSEUDO_ROWS: usize = 3;

#[derive(Debug, Clone)]
pub struct QuaternionModel {
    manifold: Manifold,
    dt: f64,
    gravity: f64,
    imu_noise: ImuNoise,
    feature_std: f64,
}

impl QuaternionModel {
    pub fn new(dt: f64, gravity: f64, imu_noise: ImuNoise, feature_std: f64) -> Self {
        let manifold = Manifold::euclidean(layout::DIM).expect("positive dimension");
        QuaternionModel { manifold, dt, gravity, imu_noise, feature_std }
    }

    fn selector(f: &Feature) -> DMatrix<f64> {
        match f.kind {
            FeatureKind::Plane => DMatrix::from_row_slice(1, 3, f.direction.as_slice()),
            FeatureKind::Edge => {
                let s = so3::skew(&f.direction);
                DMatrix::from_fn(3, 3, |r, c| s[(r, c)])
            }
        }
    }

    fn pseudo(&self, x: &StatePoint) -> [f64; PSEUDO_ROWS] {
        let g = v3(x, layout::GRAVITY);
        [
            v4(x, layout::ATTITUDE).norm_squared(),
            v4(x, layout::EXT_ROTATION).norm_squared(),
            g.norm_squared() / (self.gravity * self.gravity),
        ]
    }

    /// Stacked target: zero feature residuals then unit norms.
    pub fn target(&self, scan: &BaselineScan) -> DVector<f64> {
        let mut z = DVector::zeros(self.measurement_dim(scan));
        if scan.pseudo {
            let n = z.len();
            z.rows_mut(n - PSEUDO_ROWS, PSEUDO_ROWS).fill(1.0);
        }
        z
    }
}

impl SystemModel for QuaternionModel {
    type Input = ImuSample;
    type Context = BaselineScan;

    fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn noise_dim(&self) -> usize {
        noise::DIM
    }

    fn f(&self, x: &StatePoint, u: &ImuSample, w: &DVector<f64>) -> DVector<f64> {
        let q = v4(x, layout::ATTITUDE);
        let acc = rotation(&q) * (u.accel - v3(x, layout::ACCEL_BIAS) - w.fixed_rows::<3>(noise::ACCEL)) + v3(x, layout::GRAVITY);
        let rate = u.gyro - v3(x, layout::GYRO_BIAS) - w.fixed_rows::<3>(noise::GYRO);
        let mut out = DVector::zeros(layout::DIM);
        out.rows_mut(layout::POSITION, 3).copy_from(&v3(x, layout::VELOCITY));
        out.rows_mut(layout::VELOCITY, 3).copy_from(&acc);
        out.rows_mut(layout::ATTITUDE, 4).copy_from(&(0.5 * xi(&q) * rate));
        out.rows_mut(layout::ACCEL_BIAS, 3).copy_from(&w.rows(noise::ACCEL_BIAS, 3));
        out.rows_mut(layout::GYRO_BIAS, 3).copy_from(&w.rows(noise::GYRO_BIAS, 3));
        out
    }

    fn df_dx(&self, x: &StatePoint, u: &ImuSample) -> DMatrix<f64> {
        let q = v4(x, layout::ATTITUDE);
        let r = rotation(&q);
        let rate = u.gyro - v3(x, layout::GYRO_BIAS);
        let mut j = DMatrix::zeros(layout::DIM, layout::DIM);
        put(&mut j, layout::POSITION, layout::VELOCITY, &Matrix3::identity());
        put(&mut j, layout::VELOCITY, layout::ATTITUDE, &rotation_derivative(&q, &(u.accel - v3(x, layout::ACCEL_BIAS))));
        put(&mut j, layout::VELOCITY, layout::ACCEL_BIAS, &-r);
        put(&mut j, layout::VELOCITY, layout::GRAVITY, &Matrix3::identity());
        put(&mut j, layout::ATTITUDE, layout::ATTITUDE, &(0.5 * omega(&rate)));
        put(&mut j, layout::ATTITUDE, layout::GYRO_BIAS, &(-0.5 * xi(&q)));
        j
    }

    fn df_dw(&self, x: &StatePoint, _u: &ImuSample) -> DMatrix<f64> {
        let q = v4(x, layout::ATTITUDE);
        let mut j = DMatrix::zeros(layout::DIM, noise::DIM);
        put(&mut j, layout::VELOCITY, noise::ACCEL, &-rotation(&q));
        put(&mut j, layout::ATTITUDE, noise::GYRO, &(-0.5 * xi(&q)));
        put(&mut j, layout::ACCEL_BIAS, noise::ACCEL_BIAS, &Matrix3::identity());
        put(&mut j, layout::GYRO_BIAS, noise::GYRO_BIAS, &Matrix3::identity());
        j
    }

    fn process_noise(&self) -> DMatrix<f64> {
        let n = &self.imu_noise;
        let diag = [
            n.accel * n.accel,
            n.gyro * n.gyro,
            n.accel_bias_walk * n.accel_bias_walk / self.dt,
            n.gyro_bias_walk * n.gyro_bias_walk / self.dt,
        ];
        DMatrix::from_fn(noise::DIM, noise::DIM, |r, c| if r == c { diag[r / 3] } else { 0.0 })
    }

    fn measurement_dim(&self, scan: &BaselineScan) -> usize {
        scan.features.iter().map(Feature::rows).sum::<usize>() + if scan.pseudo { PSEUDO_ROWS } else { 0 }
    }

    fn measurement_noise_dim(&self, scan: &BaselineScan) -> usize {
        3 * scan.features.len() + if scan.pseudo { PSEUDO_ROWS } else { 0 }
    }

    fn h(&self, x: &StatePoint, v: &DVector<f64>, scan: &BaselineScan) -> DVector<f64> {
        let r = rotation(&v4(x, layout::ATTITUDE));
        let re = rotation(&v4(x, layout::EXT_ROTATION));
        let (p, pe) = (v3(x, layout::POSITION), v3(x, layout::EXT_TRANSLATION));
        let mut out = DVector::zeros(self.measurement_dim(scan));
        let mut row = 0;
        for (i, f) in scan.features.iter().enumerate() {
            let world = r * (re * (f.point - v.fixed_rows::<3>(3 * i)) + pe) + p;
            let res = Self::selector(f) * DVector::from_column_slice((world - f.anchor).as_slice());
            out.rows_mut(row, f.rows()).copy_from(&res);
            row += f.rows();
        }
        if scan.pseudo {
            let nv = 3 * scan.features.len();
            for (k, value) in self.pseudo(x).into_iter().enumerate() {
                out[row + k] = value + v[nv + k];
            }
        }
        out
    }

    fn dh_dx(&self, x: &StatePoint, scan: &BaselineScan) -> DMatrix<f64> {
        let q = v4(x, layout::ATTITUDE);
        let qe = v4(x, layout::EXT_ROTATION);
        let (r, re) = (rotation(&q), rotation(&qe));
        let pe = v3(x, layout::EXT_TRANSLATION);
        let mut j = DMatrix::zeros(self.measurement_dim(scan), layout::DIM);
        let mut row = 0;
        for f in &scan.features {
            let g = Self::selector(f);
            let k = f.rows();
            let lever = re * f.point + pe;
            let to_dyn = |m: DMatrix<f64>| &g * m;
            let d_att = rotation_derivative(&q, &lever);
            let d_ext = r * rotation_derivative(&qe, &f.point);
            j.view_mut((row, layout::POSITION), (k, 3)).copy_from(&to_dyn(DMatrix::identity(3, 3)));
            j.view_mut((row, layout::ATTITUDE), (k, 4)).copy_from(&to_dyn(DMatrix::from_column_slice(3, 4, d_att.as_slice())));
            j.view_mut((row, layout::EXT_ROTATION), (k, 4)).copy_from(&to_dyn(DMatrix::from_column_slice(3, 4, d_ext.as_slice())));
            j.view_mut((row, layout::EXT_TRANSLATION), (k, 3)).copy_from(&to_dyn(DMatrix::from_column_slice(3, 3, r.as_slice())));
            row += k;
        }
        if scan.pseudo {
            let g = v3(x, layout::GRAVITY);
            j.view_mut((row, layout::ATTITUDE), (1, 4)).copy_from(&(2.0 * q.transpose()));
            j.view_mut((row + 1, layout::EXT_ROTATION), (1, 4)).copy_from(&(2.0 * qe.transpose()));
            j.view_mut((row + 2, layout::GRAVITY), (1, 3)).copy_from(&(2.0 * g.transpose() / (self.gravity * self.gravity)));
        }
        j
    }

    fn dh_dv(&self, x: &StatePoint, scan: &BaselineScan) -> DMatrix<f64> {
        let rr = -rotation(&v4(x, layout::ATTITUDE)) * rotation(&v4(x, layout::EXT_ROTATION));
        let rr = DMatrix::from_column_slice(3, 3, rr.as_slice());
        let mut j = DMatrix::zeros(self.measurement_dim(scan), self.measurement_noise_dim(scan));
        let mut row = 0;
        for (i, f) in scan.features.iter().enumerate() {
            j.view_mut((row, 3 * i), (f.rows(), 3)).copy_from(&(Self::selector(f) * &rr));
            row += f.rows();
        }
        if scan.pseudo {
            let nv = 3 * scan.features.len();
            for k in 0..PSEUDO_ROWS {
                j[(row + k, nv + k)] = 1.0;
            }
        }
        j
    }

    fn measurement_noise(&self, scan: &BaselineScan) -> DMatrix<f64> {
        let nv = 3 * scan.features.len();
        let fs = self.feature_std * self.feature_std;
        DMatrix::from_fn(self.measurement_noise_dim(scan), self.measurement_noise_dim(scan), |r, c| {
            match (r == c, r < nv) {
                (false, _) => 0.0,
                (true, true) => fs,
                (true, false) => PSEUDO_STD * PSEUDO_STD,
            }
        })
    }
}

/// Maps a small error in the full model's tangent chart at `nav` to the
/// corresponding first-order change of the flat state.
fn embed_jacobian(nav: &NavState, q: &Vector4<f64>, qe: &Vector4<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(layout::DIM, tangent::DIM);
    for (row, col) in [
        (layout::POSITION, tangent::POSITION),
        (layout::VELOCITY, tangent::VELOCITY),
        (layout::ACCEL_BIAS, tangent::ACCEL_BIAS),
        (layout::GYRO_BIAS, tangent::GYRO_BIAS),
        (layout::EXT_TRANSLATION, tangent::EXT_TRANSLATION),
    ] {
        put(&mut m, row, col, &Matrix3::identity());
    }
    put(&mut m, layout::ATTITUDE, tangent::ATTITUDE, &(0.5 * xi(q)));
    put(&mut m, layout::EXT_ROTATION, tangent::EXT_ROTATION, &(0.5 * xi(qe)));
    let g = nav.gravity;
    let dg = -so3::skew(&g) * sphere::basis(&g);
    m.view_mut((layout::GRAVITY, tangent::GRAVITY), (3, 2)).copy_from(&dg);
    m
}

/// Left inverse of [`embed_jacobian`] for unit quaternions.
fn chart_jacobian(nav: &NavState, q: &Vector4<f64>, qe: &Vector4<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(tangent::DIM, layout::DIM);
    for (row, col) in [
        (tangent::POSITION, layout::POSITION),
        (tangent::VELOCITY, layout::VELOCITY),
        (tangent::ACCEL_BIAS, layout::ACCEL_BIAS),
        (tangent::GYRO_BIAS, layout::GYRO_BIAS),
        (tangent::EXT_TRANSLATION, layout::EXT_TRANSLATION),
    ] {
        put(&mut m, row, col, &Matrix3::identity());
    }
    put(&mut m, tangent::ATTITUDE, layout::ATTITUDE, &(2.0 * xi(q).transpose()));
    put(&mut m, tangent::EXT_ROTATION, layout::EXT_ROTATION, &(2.0 * xi(qe).transpose()));
    let g = nav.gravity;
    let back = sphere::basis(&g).transpose() * so3::skew(&g) / g.norm_squared();
    m.view_mut((tangent::GRAVITY, layout::GRAVITY), (2, 3)).copy_from(&back);
    m
}

/// Flat-state filter with rescaling after each step.
#[derive(Debug, Clone)]
pub struct QuaternionFilter {
    model: QuaternionModel,
    state: FilterState,
    config: UpdateConfig,
    normalization: Normalization,
}

impl QuaternionFilter {
    /// Starts at `nav` with `tangent_covariance` expressed in the full model's chart.
    pub fn new(
        model: QuaternionModel,
        nav: &NavState,
        tangent_covariance: &DMatrix<f64>,
        config: UpdateConfig,
        normalization: Normalization,
    ) -> Result<Self, FilterError> {
        let x = Self::flatten(nav);
        let m = embed_jacobian(nav, &v4(&x, layout::ATTITUDE), &v4(&x, layout::EXT_ROTATION));
        let p = &m * tangent_covariance * m.transpose();
        let state = FilterState::new(model.manifold(), x, p)?;
        Ok(QuaternionFilter { model, state, config, normalization })
    }

    pub fn flatten(nav: &NavState) -> StatePoint {
        let mut x = DVector::zeros(layout::DIM);
        x.fixed_rows_mut::<3>(layout::POSITION).copy_from(&nav.position);
        x.fixed_rows_mut::<3>(layout::VELOCITY).copy_from(&nav.velocity);
        x.fixed_rows_mut::<4>(layout::ATTITUDE).copy_from(&quaternion_of(&nav.attitude));
        x.fixed_rows_mut::<3>(layout::ACCEL_BIAS).copy_from(&nav.accel_bias);
        x.fixed_rows_mut::<3>(layout::GYRO_BIAS).copy_from(&nav.gyro_bias);
        x.fixed_rows_mut::<3>(layout::GRAVITY).copy_from(&nav.gravity);
        x.fixed_rows_mut::<4>(layout::EXT_ROTATION).copy_from(&quaternion_of(&nav.ext_rotation));
        x.fixed_rows_mut::<3>(layout::EXT_TRANSLATION).copy_from(&nav.ext_translation);
        StatePoint::from_vec(x)
    }

    pub fn model(&self) -> &QuaternionModel {
        &self.model
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn nav(&self) -> NavState {
        let x = &self.state.x;
        NavState {
            position: v3(x, layout::POSITION),
            velocity: v3(x, layout::VELOCITY),
            attitude: unit_quaternion(&v4(x, layout::ATTITUDE)).to_rotation_matrix().into_inner(),
            accel_bias: v3(x, layout::ACCEL_BIAS),
            gyro_bias: v3(x, layout::GYRO_BIAS),
            gravity: v3(x, layout::GRAVITY).normalize() * self.model.gravity,
            ext_rotation: unit_quaternion(&v4(x, layout::EXT_ROTATION)).to_rotation_matrix().into_inner(),
            ext_translation: v3(x, layout::EXT_TRANSLATION),
        }
    }

    /// Covariance mapped into the full model's tangent chart at [`Self::nav`].
    pub fn tangent_covariance(&self) -> DMatrix<f64> {
        let x = &self.state.x;
        let t = chart_jacobian(&self.nav(), &v4(x, layout::ATTITUDE), &v4(x, layout::EXT_ROTATION));
        &t * &self.state.p * t.transpose()
    }

    fn rescale(&mut self) {
        let g = self.model.gravity;
        let x = self.state.x.as_vector_mut();
        for at in [layout::ATTITUDE, layout::EXT_ROTATION] {
            let q = x.fixed_rows::<4>(at).normalize();
            x.fixed_rows_mut::<4>(at).copy_from(&q);
        }
        let dir = x.fixed_rows::<3>(layout::GRAVITY).normalize();
        x.fixed_rows_mut::<3>(layout::GRAVITY).copy_from(&(dir * g));
    }

    pub fn predict(&mut self, imu: &ImuSample) -> Result<(), FilterError> {
        self.state = filter::predict(&self.model, &self.state, imu)?;
        self.rescale();
        Ok(())
    }

    /// Returns the number of gain computations.
    pub fn update(&mut self, features: &[Feature]) -> Result<usize, FilterError> {
        let scan = BaselineScan { features: features.to_vec(), pseudo: self.normalization == Normalization::PseudoMeasurement };
        let z = self.model.target(&scan);
        let (state, diag) = filter::update(&self.model, &self.state, &z, &scan, &self.config)?;
        self.state = state;
        self.rescale();
        Ok(diag.iterations)
    }
}
