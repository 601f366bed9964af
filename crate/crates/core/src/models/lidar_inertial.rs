//! Tightly coupled lidar-inertial odometry with online gravity and
//! lidar-to-IMU extrinsic estimation.
//!
//! The state is `(p, v, R, b_a, b_g, g, R_ext, p_ext)` on
//! `R^3 x R^3 x SO(3) x R^3 x R^3 x S^2 x SO(3) x R^3`. IMU samples drive the
//! prediction; each lidar scan contributes point-to-plane or point-to-edge
//! residuals against a known map.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::filter::{FilterError, SystemModel};
use crate::manifold::so3::skew;
use crate::manifold::{sphere, Manifold, StatePoint};

/// Offsets of each block in the tangent space.
pub mod tangent {
    pub const POSITION: usize = 0;
    pub const VELOCITY: usize = 3;
    pub const ATTITUDE: usize = 6;
    pub const ACCEL_BIAS: usize = 9;
    pub const GYRO_BIAS: usize = 12;
    pub const GRAVITY: usize = 15;
    pub const EXT_ROTATION: usize = 17;
    pub const EXT_TRANSLATION: usize = 20;
    pub const DIM: usize = 23;
}

/// Offsets of each block in the control (velocity) space.
pub mod control {
    pub const POSITION: usize = 0;
    pub const VELOCITY: usize = 3;
    pub const ATTITUDE: usize = 6;
    pub const ACCEL_BIAS: usize = 9;
    pub const GYRO_BIAS: usize = 12;
    pub const GRAVITY: usize = 15;
    pub const DIM: usize = 24;
}

/// Offsets of each block in the stored representation.
pub mod rep {
    pub const POSITION: usize = 0;
    pub const VELOCITY: usize = 3;
    pub const ATTITUDE: usize = 6;
    pub const ACCEL_BIAS: usize = 15;
    pub const GYRO_BIAS: usize = 18;
    pub const GRAVITY: usize = 21;
    pub const EXT_ROTATION: usize = 24;
    pub const EXT_TRANSLATION: usize = 33;
    pub const DIM: usize = 36;
}

/// Offsets inside the process noise vector `(n_a, n_g, n_ba, n_bg)`.
pub mod noise {
    pub const ACCEL: usize = 0;
    pub const GYRO: usize = 3;
    pub const ACCEL_BIAS: usize = 6;
    pub const GYRO_BIAS: usize = 9;
    pub const DIM: usize = 12;
}

/// Names of the tangent blocks with their offsets and sizes.
pub const BLOCKS: [(&str, usize, usize); 8] = [
    ("position", tangent::POSITION, 3),
    ("velocity", tangent::VELOCITY, 3),
    ("attitude", tangent::ATTITUDE, 3),
    ("accel_bias", tangent::ACCEL_BIAS, 3),
    ("gyro_bias", tangent::GYRO_BIAS, 3),
    ("gravity", tangent::GRAVITY, 2),
    ("ext_rotation", tangent::EXT_ROTATION, 3),
    ("ext_translation", tangent::EXT_TRANSLATION, 3),
];

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Matrix3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub ext_rotation: Matrix3<f64>,
    pub ext_translation: Vector3<f64>,
}

impl NavState {
    pub fn to_point(&self) -> StatePoint {
        let mut x = StatePoint::from_vec(DVector::zeros(rep::DIM));
        x.set_vec3(rep::POSITION, &self.position);
        x.set_vec3(rep::VELOCITY, &self.velocity);
        x.set_mat3(rep::ATTITUDE, &self.attitude);
        x.set_vec3(rep::ACCEL_BIAS, &self.accel_bias);
        x.set_vec3(rep::GYRO_BIAS, &self.gyro_bias);
        x.set_vec3(rep::GRAVITY, &self.gravity);
        x.set_mat3(rep::EXT_ROTATION, &self.ext_rotation);
        x.set_vec3(rep::EXT_TRANSLATION, &self.ext_translation);
        x
    }

    pub fn from_point(x: &StatePoint) -> Self {
        NavState {
            position: x.vec3(rep::POSITION),
            velocity: x.vec3(rep::VELOCITY),
            attitude: x.mat3(rep::ATTITUDE),
            accel_bias: x.vec3(rep::ACCEL_BIAS),
            gyro_bias: x.vec3(rep::GYRO_BIAS),
            gravity: x.vec3(rep::GRAVITY),
            ext_rotation: x.mat3(rep::EXT_ROTATION),
            ext_translation: x.vec3(rep::EXT_TRANSLATION),
        }
    }
}

/// One accelerometer and gyroscope sample in the IMU frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// IMU noise densities. Measurement noise is the per-sample standard
/// deviation; bias random walks are in units per square-root second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    pub accel: f64,
    pub gyro: f64,
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Residual is the signed distance to a plane with unit normal `direction`.
    Plane,
    /// Residual is the perpendicular offset from a line with unit `direction`.
    Edge,
}

/// A lidar point matched to a map primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub kind: FeatureKind,
    /// Measured point in the lidar frame.
    pub point: Vector3<f64>,
    /// Plane normal or edge direction in the world frame.
    pub direction: Vector3<f64>,
    /// Any world point on the plane or edge.
    pub anchor: Vector3<f64>,
}

impl Feature {
    pub fn rows(&self) -> usize {
        match self.kind {
            FeatureKind::Plane => 1,
            FeatureKind::Edge => 3,
        }
    }

    /// Projection from a world-frame offset to the residual.
    fn selector(&self) -> DMatrix<f64> {
        match self.kind {
            FeatureKind::Plane => DMatrix::from_row_slice(1, 3, self.direction.as_slice()),
            FeatureKind::Edge => {
                let s = skew(&self.direction);
                DMatrix::from_fn(3, 3, |r, c| s[(r, c)])
            }
        }
    }
}

fn m3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |r, c| m[(r, c)])
}

#[derive(Debug, Clone)]
pub struct LidarInertialModel {
    manifold: Manifold,
    dt: f64,
    imu_noise: ImuNoise,
    feature_std: f64,
}

impl LidarInertialModel {
    pub fn new(dt: f64, gravity: f64, imu_noise: ImuNoise, feature_std: f64) -> Result<Self, FilterError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(FilterError::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let r3 = || Manifold::euclidean(3).expect("positive dimension");
        let manifold = Manifold::compound(vec![
            r3(),
            r3(),
            Manifold::rotation(),
            r3(),
            r3(),
            Manifold::sphere(gravity)?,
            Manifold::rotation(),
            r3(),
        ])?;
        Ok(LidarInertialModel { manifold, dt, imu_noise, feature_std })
    }

    pub fn imu_noise(&self) -> &ImuNoise {
        &self.imu_noise
    }

    pub fn feature_std(&self) -> f64 {
        self.feature_std
    }

    /// Stacked residual target; all residuals are zero for a perfect match.
    pub fn target(&self, features: &[Feature]) -> DVector<f64> {
        DVector::zeros(self.measurement_dim(features))
    }
}

impl SystemModel for LidarInertialModel {
    type Input = ImuSample;
    type Context = [Feature];

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
        let s = NavState::from_point(x);
        let na = Vector3::new(w[noise::ACCEL], w[noise::ACCEL + 1], w[noise::ACCEL + 2]);
        let ng = Vector3::new(w[noise::GYRO], w[noise::GYRO + 1], w[noise::GYRO + 2]);
        let acc = s.attitude * (u.accel - s.accel_bias - na) + s.gravity;
        let rate = u.gyro - s.gyro_bias - ng;
        let mut out = DVector::zeros(control::DIM);
        out.rows_mut(control::POSITION, 3).copy_from(&s.velocity);
        out.rows_mut(control::VELOCITY, 3).copy_from(&acc);
        out.rows_mut(control::ATTITUDE, 3).copy_from(&rate);
        out.rows_mut(control::ACCEL_BIAS, 3).copy_from(&w.rows(noise::ACCEL_BIAS, 3));
        out.rows_mut(control::GYRO_BIAS, 3).copy_from(&w.rows(noise::GYRO_BIAS, 3));
        out
    }

    fn df_dx(&self, x: &StatePoint, u: &ImuSample) -> DMatrix<f64> {
        let s = NavState::from_point(x);
        let mut j = DMatrix::zeros(control::DIM, tangent::DIM);
        let eye = DMatrix::<f64>::identity(3, 3);
        j.view_mut((control::POSITION, tangent::VELOCITY), (3, 3)).copy_from(&eye);
        let dv_dr = -s.attitude * skew(&(u.accel - s.accel_bias));
        j.view_mut((control::VELOCITY, tangent::ATTITUDE), (3, 3)).copy_from(&m3(&dv_dr));
        j.view_mut((control::VELOCITY, tangent::ACCEL_BIAS), (3, 3)).copy_from(&m3(&-s.attitude));
        let dv_dg = -skew(&s.gravity) * sphere::basis(&s.gravity);
        j.view_mut((control::VELOCITY, tangent::GRAVITY), (3, 2)).copy_from(&dv_dg);
        j.view_mut((control::ATTITUDE, tangent::GYRO_BIAS), (3, 3)).copy_from(&-eye);
        j
    }

    fn df_dw(&self, x: &StatePoint, _u: &ImuSample) -> DMatrix<f64> {
        let r = x.mat3(rep::ATTITUDE);
        let mut j = DMatrix::zeros(control::DIM, noise::DIM);
        let eye = DMatrix::<f64>::identity(3, 3);
        j.view_mut((control::VELOCITY, noise::ACCEL), (3, 3)).copy_from(&m3(&-r));
        j.view_mut((control::ATTITUDE, noise::GYRO), (3, 3)).copy_from(&-&eye);
        j.view_mut((control::ACCEL_BIAS, noise::ACCEL_BIAS), (3, 3)).copy_from(&eye);
        j.view_mut((control::GYRO_BIAS, noise::GYRO_BIAS), (3, 3)).copy_from(&eye);
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

    fn measurement_dim(&self, features: &[Feature]) -> usize {
        features.iter().map(Feature::rows).sum()
    }

    fn measurement_noise_dim(&self, features: &[Feature]) -> usize {
        3 * features.len()
    }

    fn h(&self, x: &StatePoint, v: &DVector<f64>, features: &[Feature]) -> DVector<f64> {
        let s = NavState::from_point(x);
        let mut out = DVector::zeros(self.measurement_dim(features));
        let mut row = 0;
        for (i, f) in features.iter().enumerate() {
            let noise = Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
            let world = s.attitude * (s.ext_rotation * (f.point - noise) + s.ext_translation) + s.position;
            let offset = world - f.anchor;
            let res = f.selector() * DVector::from_column_slice(offset.as_slice());
            out.rows_mut(row, f.rows()).copy_from(&res);
            row += f.rows();
        }
        out
    }

    fn dh_dx(&self, x: &StatePoint, features: &[Feature]) -> DMatrix<f64> {
        let s = NavState::from_point(x);
        let mut j = DMatrix::zeros(self.measurement_dim(features), tangent::DIM);
        let mut row = 0;
        for f in features {
            let g = f.selector();
            let k = f.rows();
            let lever = s.ext_rotation * f.point + s.ext_translation;
            let blocks = [
                (tangent::POSITION, DMatrix::identity(3, 3)),
                (tangent::ATTITUDE, m3(&(-s.attitude * skew(&lever)))),
                (tangent::EXT_ROTATION, m3(&(-s.attitude * s.ext_rotation * skew(&f.point)))),
                (tangent::EXT_TRANSLATION, m3(&s.attitude)),
            ];
            for (col, block) in blocks {
                j.view_mut((row, col), (k, 3)).copy_from(&(&g * block));
            }
            row += k;
        }
        j
    }

    fn dh_dv(&self, x: &StatePoint, features: &[Feature]) -> DMatrix<f64> {
        let s = NavState::from_point(x);
        let rr = m3(&(-s.attitude * s.ext_rotation));
        let mut j = DMatrix::zeros(self.measurement_dim(features), 3 * features.len());
        let mut row = 0;
        for (i, f) in features.iter().enumerate() {
            j.view_mut((row, 3 * i), (f.rows(), 3)).copy_from(&(f.selector() * &rr));
            row += f.rows();
        }
        j
    }

    fn measurement_noise(&self, features: &[Feature]) -> DMatrix<f64> {
        let n = 3 * features.len();
        DMatrix::identity(n, n) * (self.feature_std * self.feature_std)
    }
}

