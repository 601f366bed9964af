mod common;

use common::*;
use ikfom_core::manifold::{so3, sphere, Manifold, ManifoldError};
use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::Rng;

/// Keeps rotations and sphere steps away from the cut locus at pi.
const MAX_ANGLE: f64 = 3.0;

fn primitives() -> Vec<Manifold> {
    vec![
        Manifold::euclidean(4).unwrap(),
        Manifold::rotation(),
        Manifold::sphere(1.0).unwrap(),
        Manifold::sphere(9.81).unwrap(),
        mixed_manifold(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn boxplus_then_boxminus_recovers_step(seed in any::<u64>(), which in 0usize..5) {
        let m = &primitives()[which];
        let mut r = rng(seed);
        let x = random_point(m, &mut r);
        let u = random_tangent(m, &mut r, MAX_ANGLE);
        let y = m.boxplus(&x, &u).unwrap();
        let back = m.boxminus(&y, &x).unwrap();
        prop_assert!((back - &u).amax() < 1e-9);
    }

    #[test]
    fn boxminus_then_boxplus_recovers_point(seed in any::<u64>(), which in 0usize..5) {
        let m = &primitives()[which];
        let mut r = rng(seed);
        let x = random_point(m, &mut r);
        let y = m.boxplus(&x, &random_tangent(m, &mut r, MAX_ANGLE)).unwrap();
        let d = m.boxminus(&y, &x).unwrap();
        let z = m.boxplus(&x, &d).unwrap();
        prop_assert!((z.as_vector() - y.as_vector()).amax() < 1e-9);
    }

    #[test]
    fn zero_steps_are_neutral(seed in any::<u64>(), which in 0usize..5) {
        let m = &primitives()[which];
        let x = random_point(m, &mut rng(seed));
        let same = m.boxplus(&x, &DVector::zeros(m.tangent_dim())).unwrap();
        prop_assert_eq!(same.as_vector(), x.as_vector());
        let same = m.oplus(&x, &DVector::zeros(m.control_dim())).unwrap();
        prop_assert_eq!(same.as_vector(), x.as_vector());
        prop_assert!(m.boxminus(&x, &x).unwrap().amax() < 1e-12);
    }

    #[test]
    fn results_stay_on_manifold(seed in any::<u64>(), which in 0usize..5) {
        let m = &primitives()[which];
        let mut r = rng(seed);
        let mut x = random_point(m, &mut r);
        for _ in 0..50 {
            x = m.boxplus(&x, &random_tangent(m, &mut r, MAX_ANGLE)).unwrap();
            x = m.oplus(&x, &random_control(m, &mut r, MAX_ANGLE)).unwrap();
        }
        prop_assert!(m.check_point(&x, 1e-10).is_ok());
    }

    #[test]
    fn operator_jacobians_match_finite_differences(seed in any::<u64>(), which in 0usize..5) {
        let m = &primitives()[which];
        let mut r = rng(seed);
        let x = random_point(m, &mut r);
        let u = random_tangent(m, &mut r, 2.5);
        let v = random_control(m, &mut r, 2.5);
        let (du, dv) = m.operator_jacobians(&x, &u, &v).unwrap();
        let (fu, fv) = fd_operator_jacobians(m, &x, &u, &v);
        prop_assert!(rel_err(&du, &fu) < 1e-5, "du {du} fd {fu}");
        prop_assert!(rel_err(&dv, &fv) < 1e-5, "dv {dv} fd {fv}");
    }

    #[test]
    fn inverse_left_jacobian_is_inverse(w in prop::array::uniform3(-2.0f64..2.0)) {
        let u = Vector3::from(w);
        prop_assert!((so3::jacobian(&u) * so3::jacobian_inv(&u) - Matrix3::identity()).amax() < 1e-10);
    }
}

#[test]
fn log_exp_small_and_near_pi() {
    let mut r = rng(7);
    for scale in [0.0, 1e-12, 1e-8, 1e-5, 1e-3, 1.0, 3.1, std::f64::consts::PI - 1e-5] {
        for _ in 0..100 {
            let w = normal3(&mut r, 1.0).normalize() * scale;
            let back = so3::log(&so3::exp(&w));
            let tol = if scale > 3.1 { 1e-7 } else { 1e-12 };
            assert!((back - w).norm() <= tol * scale.max(1.0), "scale {scale}: {back} vs {w}");
        }
    }
}

#[test]
fn cut_locus_is_an_error_not_a_nan() {
    let m = Manifold::sphere(9.81).unwrap();
    let x = m.origin();
    let mut y = x.clone();
    y.set_vec3(0, &Vector3::new(0.0, 0.0, -9.81));
    assert_eq!(m.boxminus(&y, &x), Err(ManifoldError::CutLocus));
    let nested = mixed_manifold();
    let a = nested.origin();
    let mut b = a.clone();
    b.set_vec3(12, &Vector3::new(0.0, 0.0, -9.81));
    assert_eq!(nested.boxminus(&b, &a), Err(ManifoldError::CutLocus));
}

#[test]
fn compound_operators_are_componentwise() {
    let mut r = rng(11);
    let parts = [Manifold::rotation(), Manifold::sphere(2.0).unwrap(), Manifold::euclidean(2).unwrap()];
    let m = Manifold::compound(parts.to_vec()).unwrap();
    let x = random_point(&m, &mut r);
    let u = random_tangent(&m, &mut r, 2.0);
    let y = m.boxplus(&x, &u).unwrap();
    let (mut rep, mut tan) = (0, 0);
    for p in &parts {
        let xs = ikfom_core::StatePoint::from_slice(&x.as_vector().as_slice()[rep..rep + p.rep_dim()]);
        let us = u.rows(tan, p.tangent_dim()).into_owned();
        let ys = p.boxplus(&xs, &us).unwrap();
        assert_eq!(ys.as_vector().as_slice(), &y.as_vector().as_slice()[rep..rep + p.rep_dim()]);
        rep += p.rep_dim();
        tan += p.tangent_dim();
    }
}

#[test]
fn jacobians_are_block_diagonal() {
    let m = mixed_manifold();
    let mut r = rng(3);
    let x = random_point(&m, &mut r);
    let (du, dv) = m
        .operator_jacobians(&x, &random_tangent(&m, &mut r, 2.0), &random_control(&m, &mut r, 2.0))
        .unwrap();
    let leaves = m.leaves();
    for (i, a) in leaves.iter().enumerate() {
        for (j, b) in leaves.iter().enumerate() {
            if i == j {
                continue;
            }
            let block = du.view((a.tangent, b.tangent), (a.primitive.tangent_dim(), b.primitive.tangent_dim()));
            assert_eq!(block.amax(), 0.0);
            let block = dv.view((a.tangent, b.control), (a.primitive.tangent_dim(), b.primitive.control_dim()));
            assert_eq!(block.amax(), 0.0);
        }
    }
}

#[test]
fn known_rotation_jacobians() {
    // At u = 0 the u-Jacobian is exp(-v) and the v-Jacobian is the transposed left Jacobian of v.
    let m = Manifold::rotation();
    let x = m.origin();
    let v = DVector::from_vec(vec![0.0, 0.0, 0.5]);
    let (du, dv) = m.operator_jacobians(&x, &DVector::zeros(3), &v).unwrap();
    let expected = so3::exp(&Vector3::new(0.0, 0.0, -0.5));
    assert!((du - DMatrix::from_fn(3, 3, |r, c| expected[(r, c)])).amax() < 1e-15);
    let a = so3::jacobian(&Vector3::new(0.0, 0.0, 0.5)).transpose();
    assert!((dv - DMatrix::from_fn(3, 3, |r, c| a[(r, c)])).amax() < 1e-15);
}

#[test]
fn sphere_basis_and_helpers_match_finite_differences() {
    let mut r = rng(21);
    for _ in 0..200 {
        let radius = 0.5 + 10.0 * r.random::<f64>();
        let y = normal3(&mut r, 1.0).normalize() * radius;
        let x = so3::exp(&ball3(&mut r, 2.5)) * y;

        // Gradient of the geodesic angle over the chord-normal length.
        let ratio = |p: &Vector3<f64>| {
            let c = y.cross(p);
            c.norm().atan2(y.dot(p)) / c.norm()
        };
        let g = sphere::angle_gradient(&x, &y);
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = FD_STEP;
            let fd = (ratio(&(x + e)) - ratio(&(x - e))) / (2.0 * FD_STEP);
            assert!((g[i] - fd).abs() < 1e-5 * fd.abs().max(g.amax()).max(1e-3), "{} vs {fd}", g[i]);
        }

        // Derivative of x boxplus u in ambient coordinates.
        let u = Vector2::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5) * 3.0;
        let jm = sphere::boxplus_jacobian(&x, &u);
        for i in 0..2 {
            let mut e = Vector2::zeros();
            e[i] = FD_STEP;
            let fd = (sphere::boxplus(&x, &(u + e)) - sphere::boxplus(&x, &(u - e))) / (2.0 * FD_STEP);
            assert!((jm.column(i) - fd).amax() < 1e-5 * radius);
        }
    }
}

#[test]
fn rotated_vector_derivative() {
    let mut r = rng(5);
    for _ in 0..200 {
        let x = random_rotation(&mut r);
        let a = normal3(&mut r, 2.0);
        let j = so3::rotate_jacobian(&x, &a);
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = FD_STEP;
            let fd = (x * so3::exp(&e) * a - x * so3::exp(&-e) * a) / (2.0 * FD_STEP);
            assert!((j.column(i) - fd).amax() < 1e-8);
        }
    }
}
