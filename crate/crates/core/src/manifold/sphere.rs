//! Two-sphere of radius `r` embedded in R^3, parametrized locally by a
//! 2-D tangent basis and moved around by rotations.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, RowVector3, Vector2, Vector3};

use super::so3::{self, skew};
use super::ManifoldError;

/// Ratio `s/c` below which `atan2(s, c)/s` and friends use series.
const SMALL_RATIO: f64 = 1e-2;

/// Relative tolerance used to declare two points antipodal.
const ANTIPODAL_TOL: f64 = 1e-12;

/// `atan2(s, c) / s` for `s >= 0`, finite as `s -> 0` with `c > 0`.
fn angle_over_sine(s: f64, c: f64) -> f64 {
    if c > 0.0 && s < SMALL_RATIO * c {
        let t = s / c;
        let t2 = t * t;
        (1.0 - t2 / 3.0 + t2 * t2 / 5.0 - t2 * t2 * t2 / 7.0) / c
    } else {
        s.atan2(c) / s
    }
}

/// `(r^4 * theta - c * s) / s^3` with `r^4 = s^2 + c^2`, finite as `s -> 0`.
fn curvature_coeff(s: f64, c: f64) -> f64 {
    if c > 0.0 && s < SMALL_RATIO * c {
        let t = s / c;
        let t2 = t * t;
        (2.0 / 3.0 - 2.0 * t2 / 15.0 + 2.0 * t2 * t2 / 35.0 - 2.0 * t2 * t2 * t2 / 63.0) / c
    } else {
        let r4 = s * s + c * c;
        (r4 * s.atan2(c) - c * s) / (s * s * s)
    }
}

/// Orthonormal tangent basis at `x`, a 3x2 matrix whose columns span the
/// plane orthogonal to `x`.
///
/// The basis is obtained by rotating the coordinate axis best aligned with
/// `x` onto `x` and carrying the other two axes along. Ties go to the lower
/// index, so `x` along `+z` yields the first two coordinate axes.
pub fn basis(x: &Vector3<f64>) -> Matrix3x2<f64> {
    let i = if x.x >= x.y && x.x >= x.z {
        0
    } else if x.y >= x.z {
        1
    } else {
        2
    };
    let j = (i + 1) % 3;
    let k = (i + 2) % 3;
    let mut axis = Vector3::zeros();
    axis[i] = 1.0;
    let cross = axis.cross(x);
    let s = cross.norm();
    let c = x[i];
    let rot = if s == 0.0 {
        Matrix3::identity()
    } else {
        so3::exp(&(cross * angle_over_sine(s, c)))
    };
    Matrix3x2::from_columns(&[rot.column(j).into_owned(), rot.column(k).into_owned()])
}

/// `x` moved along the geodesic with tangent coordinates `u`.
pub fn boxplus(x: &Vector3<f64>, u: &Vector2<f64>) -> Vector3<f64> {
    so3::exp(&(basis(x) * u)) * x
}

/// Tangent coordinates at `x` of the geodesic reaching `y`.
///
/// Both points must share the radius. Antipodal points have no unique
/// geodesic and are rejected.
pub fn boxminus(y: &Vector3<f64>, x: &Vector3<f64>) -> Result<Vector2<f64>, ManifoldError> {
    let cross = x.cross(y);
    let s = cross.norm();
    let c = x.dot(y);
    if c < 0.0 && s <= ANTIPODAL_TOL * x.norm_squared() {
        return Err(ManifoldError::CutLocus);
    }
    Ok(basis(x).transpose() * cross * angle_over_sine(s, c))
}

/// `x` rotated by `exp(v)`.
pub fn oplus(x: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    so3::exp(v) * x
}

/// Row vector appearing in the derivative of the geodesic angle; see [`boxminus_jacobian`].
pub fn angle_gradient(x: &Vector3<f64>, y: &Vector3<f64>) -> RowVector3<f64> {
    let yx = skew(y);
    let s = (yx * x).norm();
    let c = y.dot(x);
    let r4 = s * s + c * c;
    let k = curvature_coeff(s, c);
    (x.transpose() * yx * yx * k - y.transpose()) / r4
}

/// Derivative of `x boxminus y` with respect to `x` in ambient coordinates.
///
/// At `x == y` this reduces to `basis(y)^T skew(y) / r^2`.
pub fn boxminus_jacobian(x: &Vector3<f64>, y: &Vector3<f64>) -> Result<Matrix2x3<f64>, ManifoldError> {
    let yx = skew(y);
    let cross = yx * x;
    let s = cross.norm();
    let c = y.dot(x);
    if c < 0.0 && s <= ANTIPODAL_TOL * y.norm_squared() {
        return Err(ManifoldError::CutLocus);
    }
    let inner = yx * angle_over_sine(s, c) + cross * angle_gradient(x, y);
    Ok(basis(y).transpose() * inner)
}

/// Derivative of `x boxplus u` with respect to `u`, in ambient coordinates.
pub fn boxplus_jacobian(x: &Vector3<f64>, u: &Vector2<f64>) -> Matrix3x2<f64> {
    let b = basis(x);
    let bu = b * u;
    -so3::exp(&bu) * skew(x) * so3::jacobian(&bu).transpose() * b
}

/// Tangent-space derivatives of `((x boxplus u) oplus v) boxminus y` at
/// `y = (x boxplus u) oplus v`, as `(d/du, d/dv)`.
pub fn operator_jacobians(
    x: &Vector3<f64>,
    u: &Vector2<f64>,
    v: &Vector3<f64>,
) -> (nalgebra::Matrix2<f64>, Matrix2x3<f64>) {
    let z = boxplus(x, u);
    let rot = so3::exp(v);
    let y = rot * z;
    let r2 = y.norm_squared();
    // The boxminus Jacobian at coincident points is basis^T skew / r^2.
    let outer = basis(&y).transpose() * skew(&y) / r2 * rot;
    let dv = -outer * skew(&z) * so3::jacobian(v).transpose();
    let du = if u.iter().all(|&e| e == 0.0) && v.iter().all(|&e| e == 0.0) {
        nalgebra::Matrix2::identity()
    } else {
        outer * boxplus_jacobian(x, u)
    };
    (du, dv)
}
