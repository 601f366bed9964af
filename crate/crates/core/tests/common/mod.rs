#![allow(dead_code)]

use ikfom_core::manifold::{so3, Manifold, Primitive, StatePoint};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut impl Rng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

pub fn normal3(rng: &mut impl Rng, std: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Vector with length uniform in `[0, max_norm)` along a random direction.
pub fn ball3(rng: &mut impl Rng, max_norm: f64) -> Vector3<f64> {
    normal3(rng, 1.0).normalize() * (max_norm * rng.random::<f64>())
}

pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Matrix3<f64> {
    so3::exp(&ball3(rng, std::f64::consts::PI))
}

pub fn random_point(m: &Manifold, rng: &mut impl Rng) -> StatePoint {
    let mut x = m.origin();
    for leaf in m.leaves() {
        match leaf.primitive {
            Primitive::Euclidean(n) => {
                for k in 0..n {
                    x.as_vector_mut()[leaf.rep + k] = 3.0 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Primitive::Rotation => x.set_mat3(leaf.rep, &random_rotation(rng)),
            Primitive::Sphere { radius } => x.set_vec3(leaf.rep, &(normal3(rng, 1.0).normalize() * radius)),
        }
    }
    x
}

/// Tangent vector whose non-Euclidean blocks stay below `max_angle`.
pub fn random_tangent(m: &Manifold, rng: &mut impl Rng, max_angle: f64) -> DVector<f64> {
    let mut u = DVector::zeros(m.tangent_dim());
    for leaf in m.leaves() {
        match leaf.primitive {
            Primitive::Euclidean(n) => {
                for k in 0..n {
                    u[leaf.tangent + k] = 3.0 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Primitive::Rotation => u.rows_mut(leaf.tangent, 3).copy_from(&ball3(rng, max_angle)),
            Primitive::Sphere { .. } => {
                let dir = normal_vec(rng, 2, 1.0).normalize();
                u.rows_mut(leaf.tangent, 2).copy_from(&(dir * (max_angle * rng.random::<f64>())));
            }
        }
    }
    u
}

/// Control increment whose rotation blocks stay below `max_angle`.
pub fn random_control(m: &Manifold, rng: &mut impl Rng, max_angle: f64) -> DVector<f64> {
    let mut v = DVector::zeros(m.control_dim());
    for leaf in m.leaves() {
        match leaf.primitive {
            Primitive::Euclidean(n) => {
                for k in 0..n {
                    v[leaf.control + k] = 3.0 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Primitive::Rotation | Primitive::Sphere { .. } => {
                v.rows_mut(leaf.control, 3).copy_from(&ball3(rng, max_angle))
            }
        }
    }
    v
}

/// Central differences of a vector-valued map.
pub fn central_diff<F>(n: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = FD_STEP;
        cols.push((f(&e) - f(&-e)) / (2.0 * FD_STEP));
    }
    DMatrix::from_columns(&cols)
}

/// Finite-difference Jacobians of `((x boxplus u) oplus v) boxminus y` at
/// the point where it vanishes.
pub fn fd_operator_jacobians(
    m: &Manifold,
    x: &StatePoint,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let y = m.oplus(&m.boxplus(x, u).unwrap(), v).unwrap();
    let du = central_diff(m.tangent_dim(), |d| {
        m.boxminus(&m.oplus(&m.boxplus(x, &(u + d)).unwrap(), v).unwrap(), &y).unwrap()
    });
    let dv = central_diff(m.control_dim(), |d| {
        m.boxminus(&m.oplus(&m.boxplus(x, u).unwrap(), &(v + d)).unwrap(), &y).unwrap()
    });
    (du, dv)
}

/// Max-abs error relative to the reference scale (floored at one).
pub fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).amax() / reference.amax().max(1.0)
}

/// The manifold used by most tests: every primitive, nested once.
pub fn mixed_manifold() -> Manifold {
    Manifold::compound(vec![
        Manifold::euclidean(3).unwrap(),
        Manifold::rotation(),
        Manifold::compound(vec![Manifold::sphere(9.81).unwrap(), Manifold::euclidean(1).unwrap()]).unwrap(),
        Manifold::sphere(1.0).unwrap(),
    ])
    .unwrap()
}
