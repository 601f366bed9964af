//! Ground truth, noisy IMU samples and matched lidar features for one trial.
//!
//! Truth is propagated by the same discrete model the filter uses, driven by
//! the sampled noise, so a filter with the right noise model is exactly
//! consistent up to linearization.

use std::f64::consts::PI;

use ikfom_core::filter::SystemModel;
use ikfom_core::manifold::{so3, Manifold, ManifoldError, StatePoint};
use ikfom_core::models::lidar_inertial::{noise, tangent, Feature, FeatureKind, ImuNoise, ImuSample, LidarInertialModel, NavState};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Scenario, ScenarioConfig};

/// Lever arm and mounting rotation the estimator starts from.
pub fn nominal_extrinsics() -> (nalgebra::Matrix3<f64>, Vector3<f64>) {
    (so3::exp(&Vector3::new(0.05, -0.1, 0.15)), Vector3::new(0.1, 0.05, -0.08))
}

/// Gravity direction the estimator starts from. Deliberately off the
/// vertical so the sphere chart never sits on a basis switch.
pub fn nominal_gravity(magnitude: f64) -> Vector3<f64> {
    Vector3::new(0.1, -0.05, -1.0).normalize() * magnitude
}

/// A plane of the synthetic map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    /// Unit normal.
    pub normal: Vector3<f64>,
    pub anchor: Vector3<f64>,
}

impl Plane {
    /// Closest point on the plane to `p`.
    fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.normal.dot(&(p - self.anchor))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// IMU reading taken at the previous truth state and used to reach this one.
    pub imu: ImuSample,
    pub truth: NavState,
    pub scan: Option<Vec<Feature>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Where the estimator starts.
    pub nominal: NavState,
    pub initial_covariance: DMatrix<f64>,
    pub initial_truth: NavState,
    pub map: Vec<Plane>,
    pub samples: Vec<Sample>,
}

/// Designed body rate and world-frame acceleration at time `t`.
#[derive(Debug, Clone, Copy)]
struct Motion {
    angular_velocity: Vector3<f64>,
    acceleration: Vector3<f64>,
}

struct Profile {
    scenario: Scenario,
    peak_rate: f64,
}

const CIRCLE_RADIUS: f64 = 3.0;
const CIRCLE_RATE: f64 = 0.5;

impl Profile {
    fn start(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self.scenario {
            Scenario::Static => (Vector3::zeros(), Vector3::zeros()),
            Scenario::Circle => (Vector3::new(CIRCLE_RADIUS, 0.0, 0.0), Vector3::new(0.0, CIRCLE_RADIUS * CIRCLE_RATE, 0.36)),
            Scenario::FastRotation => (Vector3::zeros(), Vector3::new(0.4, 0.3, 0.1)),
        }
    }

    fn at(&self, t: f64) -> Motion {
        match self.scenario {
            Scenario::Static => Motion { angular_velocity: Vector3::zeros(), acceleration: Vector3::zeros() },
            Scenario::Circle => {
                let phase = CIRCLE_RATE * t;
                let centripetal = -CIRCLE_RADIUS * CIRCLE_RATE * CIRCLE_RATE;
                Motion {
                    angular_velocity: Vector3::new(0.6 * (1.3 * t).sin(), 0.5 * (0.9 * t).cos(), 0.3 + 0.2 * (0.7 * t).sin()),
                    acceleration: Vector3::new(centripetal * phase.cos(), centripetal * phase.sin(), -0.432 * (1.2 * t).sin()),
                }
            }
            Scenario::FastRotation => {
                let axis = Vector3::new((0.9 * t).cos(), (0.9 * t).sin(), 0.6 * (0.4 * t).cos()).normalize();
                Motion {
                    angular_velocity: axis * (self.peak_rate * (PI * t).sin()),
                    acceleration: -0.2 * Vector3::new(4.0 * (2.0 * t).sin(), 2.25 * (1.5 * t).sin(), 0.5 * t.sin()),
                }
            }
        }
    }
}

fn normal3(rng: &mut impl Rng, std: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| std * rng.sample::<f64, _>(StandardNormal))
}

fn uniform3(rng: &mut impl Rng, half_width: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| half_width * (2.0 * rng.random::<f64>() - 1.0))
}

fn unit3(rng: &mut impl Rng) -> Vector3<f64> {
    normal3(rng, 1.0).normalize()
}

pub fn imu_noise(cfg: &ScenarioConfig) -> ImuNoise {
    ImuNoise {
        accel: cfg.accel_noise,
        gyro: cfg.gyro_noise,
        accel_bias_walk: cfg.accel_bias_walk,
        gyro_bias_walk: cfg.gyro_bias_walk,
    }
}

pub fn model(cfg: &ScenarioConfig) -> LidarInertialModel {
    LidarInertialModel::new(cfg.dt, cfg.gravity, imu_noise(cfg), cfg.feature_std).expect("validated config")
}

/// Diagonal initial covariance in the tangent layout of the full model.
pub fn initial_covariance(cfg: &ScenarioConfig) -> DMatrix<f64> {
    let deg = PI / 180.0;
    let blocks = [
        (tangent::POSITION, 3, cfg.init_position_std),
        (tangent::VELOCITY, 3, cfg.init_velocity_std),
        (tangent::ATTITUDE, 3, cfg.init_attitude_std_deg * deg),
        (tangent::ACCEL_BIAS, 3, cfg.init_accel_bias_std),
        (tangent::GYRO_BIAS, 3, cfg.init_gyro_bias_std),
        (tangent::GRAVITY, 2, cfg.init_gravity_std_deg * deg),
        (tangent::EXT_ROTATION, 3, cfg.init_ext_rotation_std_deg * deg),
        (tangent::EXT_TRANSLATION, 3, cfg.init_ext_translation_std),
    ];
    let mut p = DMatrix::zeros(tangent::DIM, tangent::DIM);
    for (offset, len, std) in blocks {
        for i in offset..offset + len {
            p[(i, i)] = std * std;
        }
    }
    p
}

fn build_map(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<Plane> {
    (0..cfg.planes).map(|_| Plane { normal: unit3(rng), anchor: uniform3(rng, 10.0) }).collect()
}

/// Points near the sensor projected onto random map planes. Edge features
/// are left out: their three residual rows only have rank two, which makes
/// the innovation covariance singular.
fn scan(cfg: &ScenarioConfig, map: &[Plane], truth: &NavState, rng: &mut impl Rng) -> Vec<Feature> {
    (0..cfg.features_per_scan)
        .map(|_| {
            let plane = &map[rng.random_range(0..map.len())];
            let near = truth.position + unit3(rng) * (cfg.feature_range * rng.random::<f64>());
            let world = plane.project(&near);
            let body = truth.attitude.transpose() * (world - truth.position);
            let lidar = truth.ext_rotation.transpose() * (body - truth.ext_translation);
            Feature {
                kind: FeatureKind::Plane,
                point: lidar + normal3(rng, cfg.feature_std),
                direction: plane.normal,
                anchor: plane.anchor,
            }
        })
        .collect()
}

/// Draws a process noise vector with covariance `q` (diagonal).
fn process_noise(q: &DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(q.nrows(), |i, _| q[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal))
}

/// Deterministic in `seed`. Fails only if the truth leaves finite range,
/// which takes noise levels far outside any physical sensor.
pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<Trajectory, ManifoldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = model(cfg);
    let m: &Manifold = model.manifold();
    let profile = Profile { scenario: cfg.scenario, peak_rate: cfg.peak_rate_dps.to_radians() };

    let (ext_rotation, ext_translation) = nominal_extrinsics();
    let (position, velocity) = profile.start();
    let nominal = NavState {
        position,
        velocity,
        attitude: nalgebra::Matrix3::identity(),
        accel_bias: Vector3::zeros(),
        gyro_bias: Vector3::zeros(),
        gravity: nominal_gravity(cfg.gravity),
        ext_rotation,
        ext_translation,
    };
    let p0 = initial_covariance(cfg);
    let offset = DVector::from_fn(tangent::DIM, |i, _| p0[(i, i)].sqrt() * rng.sample::<f64, _>(StandardNormal));
    let x0 = m.boxplus(&nominal.to_point(), &offset)?;
    let initial_truth = NavState::from_point(&x0);

    let map = build_map(cfg, &mut rng);
    let q = model.process_noise();
    let steps = cfg.steps();
    let mut samples = Vec::with_capacity(steps);
    let mut x: StatePoint = x0;
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let s = NavState::from_point(&x);
        let motion = profile.at(t);
        let w = process_noise(&q, &mut rng);
        let specific_force = s.attitude.transpose() * (motion.acceleration - s.gravity);
        let imu = ImuSample {
            accel: specific_force + s.accel_bias + w.fixed_rows::<3>(noise::ACCEL),
            gyro: motion.angular_velocity + s.gyro_bias + w.fixed_rows::<3>(noise::GYRO),
        };
        let rate = model.f(&x, &imu, &w) * cfg.dt;
        x = m.oplus(&x, &rate)?;
        let truth = NavState::from_point(&x);
        let scan = ((k + 1) % cfg.scan_every == 0).then(|| scan(cfg, &map, &truth, &mut rng));
        samples.push(Sample { t: (k + 1) as f64 * cfg.dt, imu, truth, scan });
    }
    Ok(Trajectory { nominal, initial_covariance: p0, initial_truth, map, samples })
}

impl Trajectory {
    /// Largest designed body rate over the samples, in radians per second.
    pub fn peak_rate(&self, cfg: &ScenarioConfig) -> f64 {
        let profile = Profile { scenario: cfg.scenario, peak_rate: cfg.peak_rate_dps.to_radians() };
        (0..self.samples.len()).map(|k| profile.at(k as f64 * cfg.dt).angular_velocity.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(scenario: Scenario) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            duration: 2.0,
            accel_noise: 0.0,
            gyro_noise: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn noise_free_inputs_reintegrate_to_truth() {
        for scenario in [Scenario::Static, Scenario::Circle, Scenario::FastRotation] {
            let cfg = quiet(scenario);
            let traj = generate(&cfg, 3).unwrap();
            let model = model(&cfg);
            let zero = DVector::zeros(noise::DIM);
            let mut x = traj.initial_truth.to_point();
            for s in &traj.samples {
                x = model.manifold().oplus(&x, &(model.f(&x, &s.imu, &zero) * cfg.dt)).unwrap();
                assert!((x.as_vector() - s.truth.to_point().as_vector()).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn circle_follows_designed_shape() {
        let cfg = ScenarioConfig { duration: 4.0, ..quiet(Scenario::Circle) };
        let traj = generate(&cfg, 1).unwrap();
        let last = traj.samples.last().unwrap();
        let heading = CIRCLE_RATE * last.t;
        let expected = Vector3::new(CIRCLE_RADIUS * heading.cos(), CIRCLE_RADIUS * heading.sin(), 0.0);
        let start_offset = (traj.initial_truth.position - traj.nominal.position).norm()
            + 4.0 * (traj.initial_truth.velocity - traj.nominal.velocity).norm();
        let err = (last.truth.position.xy() - expected.xy()).norm();
        assert!(err < start_offset + 0.02, "{err}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig { duration: 1.0, ..Default::default() };
        assert_eq!(generate(&cfg, 42).unwrap(), generate(&cfg, 42).unwrap());
        assert_ne!(generate(&cfg, 42).unwrap().samples[10].imu, generate(&cfg, 43).unwrap().samples[10].imu);
    }

    #[test]
    fn fast_rotation_reaches_configured_peak() {
        let cfg = ScenarioConfig { scenario: Scenario::FastRotation, peak_rate_dps: 350.0, duration: 2.0, ..Default::default() };
        let peak = generate(&cfg, 0).unwrap().peak_rate(&cfg).to_degrees();
        assert!((peak - 350.0).abs() < 3.5, "{peak}");
    }

    #[test]
    fn scans_arrive_on_schedule_and_match_the_map() {
        let cfg = ScenarioConfig { duration: 0.5, feature_std: 1e-9, ..Default::default() };
        let traj = generate(&cfg, 5).unwrap();
        let model = model(&cfg);
        for (k, s) in traj.samples.iter().enumerate() {
            assert_eq!(s.scan.is_some(), (k + 1) % cfg.scan_every == 0);
            if let Some(features) = &s.scan {
                assert_eq!(features.len(), cfg.features_per_scan);
                let nv = model.measurement_noise_dim(features);
                let r = model.h(&s.truth.to_point(), &DVector::zeros(nv), features);
                assert!(r.amax() < 1e-7);
            }
        }
    }
}
