mod common;

use common::*;
use ikfom_core::filter::{self, FilterError, FilterState, SystemModel, UpdateConfig};
use ikfom_core::manifold::{so3, StatePoint};
use ikfom_core::models::blocks::{
    BearingLandmark, BodyAttitude, BodyGravity, Depth, DepthParam, GlobalAttitude, GlobalGravity, InverseDepth,
    KinematicInput, LogDepth, MotionBlock, StackedModel,
};
use ikfom_core::models::lidar_inertial::{
    noise, tangent, Feature, FeatureKind, ImuNoise, ImuSample, LidarInertialModel, NavState,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

fn imu_noise() -> ImuNoise {
    ImuNoise { accel: 0.05, gyro: 0.01, accel_bias_walk: 1e-3, gyro_bias_walk: 1e-4 }
}

fn random_nav(r: &mut impl Rng) -> NavState {
    NavState {
        position: normal3(r, 5.0),
        velocity: normal3(r, 2.0),
        attitude: random_rotation(r),
        accel_bias: normal3(r, 0.1),
        gyro_bias: normal3(r, 0.01),
        gravity: normal3(r, 1.0).normalize() * 9.81,
        ext_rotation: random_rotation(r),
        ext_translation: normal3(r, 0.2),
    }
}

fn random_features(r: &mut impl Rng) -> Vec<Feature> {
    (0..6)
        .map(|i| Feature {
            kind: if i % 3 == 2 { FeatureKind::Edge } else { FeatureKind::Plane },
            point: normal3(r, 4.0),
            direction: normal3(r, 1.0).normalize(),
            anchor: normal3(r, 5.0),
        })
        .collect()
}

fn lidar_model() -> LidarInertialModel {
    LidarInertialModel::new(0.005, 9.81, imu_noise(), 0.02).unwrap()
}

#[test]
fn lidar_inertial_dimensions() {
    let model = lidar_model();
    let m = model.manifold();
    assert_eq!((m.tangent_dim(), m.control_dim(), m.rep_dim()), (23, 24, 36));
    assert_eq!(model.noise_dim(), 12);
    let q = model.process_noise();
    assert_eq!(q[(noise::ACCEL, noise::ACCEL)], 0.05 * 0.05);
    assert!((q[(noise::GYRO_BIAS, noise::GYRO_BIAS)] - 1e-8 / 0.005).abs() < 1e-20);
}

#[test]
fn lidar_inertial_jacobians_match_finite_differences() {
    let model = lidar_model();
    let m = model.manifold();
    let mut r = rng(1);
    for _ in 0..50 {
        let x = random_nav(&mut r).to_point();
        let u = ImuSample { accel: normal3(&mut r, 5.0), gyro: normal3(&mut r, 2.0) };
        let zero_w = DVector::zeros(12);

        let fx = central_diff(23, |d| model.f(&m.boxplus(&x, d).unwrap(), &u, &zero_w));
        assert!(rel_err(&model.df_dx(&x, &u), &fx) < 1e-6);
        let fw = central_diff(12, |w| model.f(&x, &u, w));
        assert!(rel_err(&model.df_dw(&x, &u), &fw) < 1e-6);

        let feats = random_features(&mut r);
        let nv = model.measurement_noise_dim(&feats);
        let hx = central_diff(23, |d| model.h(&m.boxplus(&x, d).unwrap(), &DVector::zeros(nv), &feats));
        assert!(rel_err(&model.dh_dx(&x, &feats), &hx) < 1e-6);
        let hv = central_diff(nv, |v| model.h(&x, v, &feats));
        assert!(rel_err(&model.dh_dv(&x, &feats), &hv) < 1e-6);
    }
}

#[test]
fn lidar_inertial_jacobian_sparsity() {
    let model = lidar_model();
    let mut r = rng(2);
    let x = random_nav(&mut r).to_point();
    let u = ImuSample { accel: normal3(&mut r, 5.0), gyro: normal3(&mut r, 2.0) };
    let j = model.df_dx(&x, &u);
    // Extrinsics and position do not enter the dynamics.
    for col in tangent::EXT_ROTATION..tangent::DIM {
        assert_eq!(j.column(col).amax(), 0.0);
    }
    assert_eq!(j.column(tangent::POSITION).amax(), 0.0);
    let feats = random_features(&mut r);
    let h = model.dh_dx(&x, &feats);
    for (col, width) in [(tangent::VELOCITY, 3), (tangent::ACCEL_BIAS, 3), (tangent::GYRO_BIAS, 3), (tangent::GRAVITY, 2)] {
        assert_eq!(h.columns(col, width).amax(), 0.0);
    }
}

#[test]
fn residual_vanishes_for_consistent_feature() {
    let model = lidar_model();
    let mut r = rng(3);
    let nav = random_nav(&mut r);
    let world = normal3(&mut r, 5.0);
    let point = nav.ext_rotation.transpose() * (nav.attitude.transpose() * (world - nav.position) - nav.ext_translation);
    let feats = [
        Feature { kind: FeatureKind::Plane, point, direction: Vector3::z(), anchor: world + Vector3::x() },
        Feature { kind: FeatureKind::Edge, point, direction: Vector3::y(), anchor: world - 2.0 * Vector3::y() },
    ];
    let z = model.h(&nav.to_point(), &DVector::zeros(6), &feats);
    assert_eq!(z.len(), 4);
    assert!(z.amax() < 1e-12);
}

#[test]
fn scan_without_features_is_rejected() {
    let model = lidar_model();
    let x = random_nav(&mut rng(4)).to_point();
    let state = FilterState::new(model.manifold(), x, DMatrix::identity(23, 23)).unwrap();
    let err = filter::update(&model, &state, &DVector::zeros(0), &[][..], &UpdateConfig::default()).unwrap_err();
    assert_eq!(err, FilterError::EmptyMeasurement);
}

fn check_block<B: MotionBlock>(block: &B, x: &StatePoint, input: &KinematicInput) {
    let m = block.manifold();
    let fd = central_diff(m.tangent_dim(), |d| block.velocity(&m.boxplus(x, d).unwrap(), input));
    let j = block.jacobian(x, input);
    assert!(rel_err(&j, &fd) < 1e-6, "analytic {j} fd {fd}");
}

#[test]
fn block_jacobians_match_finite_differences() {
    let mut r = rng(5);
    for _ in 0..100 {
        let input = KinematicInput { angular_velocity: normal3(&mut r, 1.0), linear_velocity: normal3(&mut r, 2.0) };
        let rot = StatePoint::from_slice(random_rotation(&mut r).transpose().as_slice());
        check_block(&GlobalAttitude, &rot, &input);
        check_block(&BodyAttitude, &rot, &input);
        let g = StatePoint::from_slice((normal3(&mut r, 1.0).normalize() * 9.81).as_slice());
        check_block(&GlobalGravity { magnitude: 9.81 }, &g, &input);
        check_block(&BodyGravity { magnitude: 9.81 }, &g, &input);

        let bearing = normal3(&mut r, 1.0);
        let depth = 1.0 + 9.0 * r.random::<f64>();
        let lm = BearingLandmark::new(Depth);
        check_block(&lm, &lm.state(&bearing, depth), &input);
        let lm = BearingLandmark::new(InverseDepth);
        check_block(&lm, &lm.state(&bearing, 1.0 / depth), &input);
        let lm = BearingLandmark::new(LogDepth);
        check_block(&lm, &lm.state(&bearing, depth.ln()), &input);
    }
}

#[test]
fn depth_parametrizations_have_consistent_derivatives() {
    fn check<D: DepthParam>(d: &D, rho: f64) {
        let h = 1e-6;
        let fd1 = (d.depth(rho + h) - d.depth(rho - h)) / (2.0 * h);
        let fd2 = (d.slope(rho + h) - d.slope(rho - h)) / (2.0 * h);
        assert!((d.slope(rho) - fd1).abs() < 1e-6 * fd1.abs().max(1.0));
        assert!((d.curvature(rho) - fd2).abs() < 1e-6 * fd2.abs().max(1.0));
    }
    for rho in [0.3, 1.0, 2.5] {
        check(&Depth, rho);
        check(&InverseDepth, rho);
        check(&LogDepth, rho);
    }
}

/// Feeds a known camera motion through a single landmark block and checks
/// that the reconstructed world point does not move.
fn landmark_drift<D: DepthParam + Copy + 'static>(param: D, rho_of_depth: impl Fn(f64) -> f64) -> f64 {
    let dt = 1e-3;
    let lm = BearingLandmark::new(param);
    let model = StackedModel::new(vec![Box::new(lm)], dt, 0.0).unwrap();
    let world = Vector3::new(4.0, -1.5, 2.0);
    let (mut cam_r, mut cam_p) = (so3::exp(&Vector3::new(0.1, -0.2, 0.3)), Vector3::new(0.5, 0.2, -0.1));
    let local = cam_r.transpose() * (world - cam_p);
    let x0 = lm.state(&local, rho_of_depth(local.norm()));
    let mut state = FilterState::new(model.manifold(), x0, DMatrix::identity(3, 3) * 1e-4).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let w = Vector3::new(0.4, -0.3, 0.8 + 0.2 * (k as f64 * 0.05).sin());
        let v = Vector3::new(1.0, 0.3, -0.2);
        let input = KinematicInput { angular_velocity: w, linear_velocity: v };
        state = filter::predict(&model, &state, &input).unwrap();
        cam_p += cam_r * so3::jacobian(&(w * dt)) * v * dt;
        cam_r *= so3::exp(&(w * dt));
        let rebuilt = cam_r * lm.position(&state.x) + cam_p;
        worst = worst.max((rebuilt - world).norm() / world.norm());
    }
    worst
}

#[test]
fn landmark_stays_fixed_under_camera_motion() {
    assert!(landmark_drift(Depth, |d| d) < 1e-3);
    assert!(landmark_drift(InverseDepth, |d| 1.0 / d) < 1e-3);
    assert!(landmark_drift(LogDepth, f64::ln) < 1e-3);
}

/// MAP cost of a candidate estimate: prior mismatch plus plane residuals.
fn map_cost(model: &LidarInertialModel, prior: &FilterState, x: &StatePoint, feats: &[Feature], p_inv: &DMatrix<f64>) -> f64 {
    let e = model.manifold().boxminus(x, &prior.x).unwrap();
    let r = model.h(x, &DVector::zeros(model.measurement_noise_dim(feats)), feats);
    (e.transpose() * p_inv * &e)[(0, 0)] + r.norm_squared() / (0.02 * 0.02)
}

#[test]
fn iterations_do_not_increase_map_cost() {
    let model = lidar_model();
    let m = model.manifold();
    let mut stds = DVector::from_element(tangent::DIM, 0.05);
    stds.rows_mut(tangent::ATTITUDE, 3).fill(3f64.to_radians());
    stds.rows_mut(tangent::GYRO_BIAS, 3).fill(0.005);
    stds.rows_mut(tangent::GRAVITY, 2).fill(1f64.to_radians());
    stds.rows_mut(tangent::EXT_ROTATION, 3).fill(2f64.to_radians());
    let p = DMatrix::from_diagonal(&stds.map(|s| s * s));
    let p_inv = p.clone().try_inverse().unwrap();
    let mut r = rng(31);
    let trials = 200;
    let mut monotone = 0;
    for _ in 0..trials {
        let truth = random_nav(&mut r);
        let delta = stds.zip_map(&normal_vec(&mut r, tangent::DIM, 1.0), |s, n| s * n);
        let prior = FilterState::new(m, m.boxplus(&truth.to_point(), &delta).unwrap(), p.clone()).unwrap();
        let feats: Vec<Feature> = (0..30)
            .map(|_| {
                let world = truth.position + normal3(&mut r, 4.0);
                let local = truth.ext_rotation.transpose()
                    * (truth.attitude.transpose() * (world - truth.position) - truth.ext_translation);
                let normal = normal3(&mut r, 1.0).normalize();
                let tangent_offset = normal3(&mut r, 1.0).cross(&normal);
                Feature {
                    kind: FeatureKind::Plane,
                    point: local + normal3(&mut r, 0.02 / 3f64.sqrt()),
                    direction: normal,
                    anchor: world + tangent_offset,
                }
            })
            .collect();
        let z = DVector::zeros(feats.len());
        let mut costs = vec![map_cost(&model, &prior, &prior.x, &feats, &p_inv)];
        for k in 0..5 {
            let config = UpdateConfig { max_iterations: k, tolerance: f64::MIN_POSITIVE };
            let x = filter::update(&model, &prior, &z, &feats[..], &config).unwrap().0.x;
            costs.push(map_cost(&model, &prior, &x, &feats, &p_inv));
        }
        if costs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)) {
            monotone += 1;
        }
    }
    assert!(monotone as f64 >= 0.95 * trials as f64, "monotone in {monotone} of {trials} trials");
}
