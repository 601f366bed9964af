//! Rotation group primitives: hat map, exponential/logarithm and the
//! left Jacobian of the exponential map with its inverse.
//!
//! Everything here works on `Matrix3`/`Vector3` directly so the manifold
//! layer can call it without allocation.

use nalgebra::{Matrix3, Vector3};

use super::ManifoldError;

/// Below this rotation angle the trigonometric coefficients switch to
/// truncated Taylor series.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Traces at or below `-1 + NEAR_PI_TRACE` take the dedicated log branch.
const NEAR_PI_TRACE: f64 = 1e-6;

/// Skew-symmetric cross-product matrix, `skew(a) * b == a.cross(&b)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] on the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `sin(t)/t`.
#[inline]
fn sinc(t: f64) -> f64 {
    if t < SMALL_ANGLE {
        let t2 = t * t;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sin() / t
    }
}

/// `(1 - cos t)/t^2`.
#[inline]
fn cos_coeff(t: f64) -> f64 {
    if t < SMALL_ANGLE {
        let t2 = t * t;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        let h = (0.5 * t).sin();
        2.0 * h * h / (t * t)
    }
}

/// `(1 - sin(t)/t)/t^2`.
#[inline]
fn sin_coeff(t: f64) -> f64 {
    if t < SMALL_ANGLE {
        let t2 = t * t;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (t - t.sin()) / (t * t * t)
    }
}

/// `(t/2) cot(t/2)`.
pub fn half_cot(t: f64) -> f64 {
    if t < SMALL_ANGLE {
        let t2 = t * t;
        1.0 - t2 / 12.0 - t2 * t2 / 720.0
    } else {
        let h = 0.5 * t;
        h * h.cos() / h.sin()
    }
}

/// `(1 - half_cot(t))/t^2`.
#[inline]
fn inv_coeff(t: f64) -> f64 {
    if t < SMALL_ANGLE {
        let t2 = t * t;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        (1.0 - half_cot(t)) / (t * t)
    }
}

/// Rodrigues exponential of a rotation vector.
pub fn exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let t = w.norm();
    let k = skew(w);
    Matrix3::identity() + k * sinc(t) + k * k * cos_coeff(t)
}

/// Rotation vector of `r`, with angle in `[0, pi]`.
///
/// Assumes `r` is a rotation; use [`checked_log`] for untrusted input.
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let axis_sin = vee(r);
    let s = axis_sin.norm();
    let c = (0.5 * (r.trace() - 1.0)).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if r.trace() > -1.0 + NEAR_PI_TRACE {
        let scale = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
        } else {
            theta / s
        };
        return axis_sin * scale;
    }

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part instead.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let outer = sym / (1.0 - c);
    let k = (0..3)
        .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = outer.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&axis_sin) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Whether `r` is orthonormal with unit determinant to within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    r.iter().all(|v| v.is_finite())
        && (r.transpose() * r - Matrix3::identity()).amax() <= tol
        && (r.determinant() - 1.0).abs() <= tol
}

/// [`log`] preceded by an orthonormality check.
pub fn checked_log(r: &Matrix3<f64>, tol: f64) -> Result<Vector3<f64>, ManifoldError> {
    if !is_rotation(r, tol) {
        return Err(ManifoldError::NotOnManifold {
            leaf: 0,
            reason: format!(
                "matrix is not a rotation (orthonormality defect {:.3e}, det {:.6})",
                (r.transpose() * r - Matrix3::identity()).amax(),
                r.determinant()
            ),
        });
    }
    Ok(log(r))
}

/// Left Jacobian of the exponential map.
///
/// Satisfies `exp(u + d) ~ exp(u) * (I + skew(jacobian(u)^T d))` to first order.
pub fn jacobian(u: &Vector3<f64>) -> Matrix3<f64> {
    let t = u.norm();
    let k = skew(u);
    Matrix3::identity() + k * cos_coeff(t) + k * k * sin_coeff(t)
}

/// Closed-form inverse of [`jacobian`]. Valid for angles below `2*pi`.
pub fn jacobian_inv(u: &Vector3<f64>) -> Matrix3<f64> {
    let t = u.norm();
    let k = skew(u);
    Matrix3::identity() - k * 0.5 + k * k * inv_coeff(t)
}

/// Derivative of `x * exp(u) * a` with respect to `u` at `u = 0`.
#[inline]
pub fn rotate_jacobian(x: &Matrix3<f64>, a: &Vector3<f64>) -> Matrix3<f64> {
    -x * skew(a)
}

/// Re-orthonormalizes a nearly orthonormal matrix via SVD.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Matrix3::identity(),
    };
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}
