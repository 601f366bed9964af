//! One filter run over a generated trajectory.

use ikfom_core::filter::{FilterError, FilterState, IteratedFilter, SystemModel, UpdateConfig};
use ikfom_core::manifold::{Manifold, ManifoldError};
use ikfom_core::models::lidar_inertial::{tangent, Feature, ImuSample, LidarInertialModel, NavState};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::baseline::{QuaternionFilter, QuaternionModel};
use crate::config::{FilterKind, Normalization, ScenarioConfig};
use crate::trajectory::{self, Trajectory};

/// Either estimator behind one interface.
enum Estimator {
    Manifold(Box<IteratedFilter<LidarInertialModel>>),
    Quaternion(Box<QuaternionFilter>),
}

impl Estimator {
    fn new(cfg: &ScenarioConfig, kind: FilterKind, normalization: Normalization, traj: &Trajectory) -> Result<Self, FilterError> {
        let config = UpdateConfig { max_iterations: cfg.nmax, ..Default::default() };
        Ok(match kind {
            FilterKind::Ikfom => {
                let model = trajectory::model(cfg);
                let state = FilterState::new(model.manifold(), traj.nominal.to_point(), traj.initial_covariance.clone())?;
                Estimator::Manifold(Box::new(IteratedFilter::new(model, state, config)?))
            }
            FilterKind::Quat => {
                let model = QuaternionModel::new(cfg.dt, cfg.gravity, trajectory::imu_noise(cfg), cfg.feature_std);
                let f = QuaternionFilter::new(model, &traj.nominal, &traj.initial_covariance, config, normalization)?;
                Estimator::Quaternion(Box::new(f))
            }
        })
    }

    fn predict(&mut self, imu: &ImuSample) -> Result<(), FilterError> {
        match self {
            Estimator::Manifold(f) => f.predict(imu),
            Estimator::Quaternion(f) => f.predict(imu),
        }
    }

    fn update(&mut self, features: &[Feature]) -> Result<usize, FilterError> {
        match self {
            Estimator::Manifold(f) => {
                let z = f.model().target(features);
                let diag = f.update(&z, features)?;
                f.normalize();
                Ok(diag.iterations)
            }
            Estimator::Quaternion(f) => f.update(features),
        }
    }

    /// Estimate and covariance in the full model's tangent chart.
    fn snapshot(&self) -> (NavState, DMatrix<f64>) {
        match self {
            Estimator::Manifold(f) => (NavState::from_point(&f.state().x), f.state().p.clone()),
            Estimator::Quaternion(f) => (f.nav(), f.tangent_covariance()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub truth: NavState,
    pub estimate: NavState,
    /// `truth ⊟ estimate` in the tangent layout of the full model.
    pub error: DVector<f64>,
    pub sigma3: DVector<f64>,
    /// `None` when the covariance failed to factor.
    pub nees: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub filter: String,
    pub steps: usize,
    /// Mean NEES over the steps where the covariance factored.
    pub mean_nees: f64,
    /// Steps where the covariance could not be factored.
    pub nees_failures: usize,
    /// Fraction of (step, axis) pairs inside the 3σ envelope.
    pub containment_rate: f64,
    /// Fraction of steps with both gravity axes inside their 3σ envelope.
    pub gravity_containment: f64,
    pub final_drift_m: f64,
    pub iterations_mean: f64,
    pub ext_rotation_error_deg: f64,
    pub ext_translation_error_m: f64,
    /// Set when the filter aborted.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub summary: TrialSummary,
    /// Per-step detail; empty unless requested.
    pub steps: Vec<StepRecord>,
}

/// `eᵀ P⁻¹ e` through a Cholesky solve.
pub fn nees(error: &DVector<f64>, p: &DMatrix<f64>) -> Option<f64> {
    let chol = p.clone().cholesky()?;
    let v = error.dot(&chol.solve(error));
    (v.is_finite() && v >= 0.0).then_some(v)
}

fn label(kind: FilterKind, normalization: Normalization) -> String {
    match kind {
        FilterKind::Ikfom => kind.to_string(),
        FilterKind::Quat => format!("{kind}/{normalization}"),
    }
}

#[derive(Default)]
struct Tally {
    nees_sum: f64,
    nees_count: usize,
    nees_failures: usize,
    inside: usize,
    axes: usize,
    gravity_inside: usize,
    steps: usize,
    iterations: usize,
    updates: usize,
}

impl Tally {
    fn observe(&mut self, error: &DVector<f64>, sigma3: &DVector<f64>, nees: Option<f64>) {
        match nees {
            Some(v) => {
                self.nees_sum += v;
                self.nees_count += 1;
            }
            None => self.nees_failures += 1,
        }
        self.inside += error.iter().zip(sigma3.iter()).filter(|(e, s)| e.abs() <= **s).count();
        self.axes += error.len();
        let g = tangent::GRAVITY;
        self.gravity_inside += (error[g].abs() <= sigma3[g] && error[g + 1].abs() <= sigma3[g + 1]) as usize;
        self.steps += 1;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Runs one estimator over `traj`. Filter failures end the run early and
/// are reported in the summary rather than returned as errors.
pub fn run_on(
    cfg: &ScenarioConfig,
    traj: &Trajectory,
    seed: u64,
    kind: FilterKind,
    normalization: Normalization,
    keep_steps: bool,
) -> TrialRecord {
    let manifold: Manifold = trajectory::model(cfg).manifold().clone();
    let mut tally = Tally::default();
    let mut steps = Vec::new();
    let mut failure = None;
    let mut last = (traj.initial_truth.clone(), traj.nominal.clone());

    let mut record = |step: usize, t: f64, truth: &NavState, estimate: NavState, p: &DMatrix<f64>, tally: &mut Tally| {
        let error = manifold
            .boxminus(&truth.to_point(), &estimate.to_point())
            .unwrap_or_else(|_| DVector::from_element(tangent::DIM, f64::NAN));
        let sigma3 = p.diagonal().map(|v| 3.0 * v.max(0.0).sqrt());
        let n = nees(&error, p);
        tally.observe(&error, &sigma3, n);
        if keep_steps {
            steps.push(StepRecord { step, t, truth: truth.clone(), estimate, error, sigma3, nees: n });
        }
    };

    match Estimator::new(cfg, kind, normalization, traj) {
        Err(e) => failure = Some(format!("initialization: {e}")),
        Ok(mut est) => {
            let (nav, p) = est.snapshot();
            record(0, 0.0, &traj.initial_truth, nav, &p, &mut tally);
            for (k, s) in traj.samples.iter().enumerate() {
                let result = est.predict(&s.imu).and_then(|_| match &s.scan {
                    Some(features) => est.update(features).map(Some),
                    None => Ok(None),
                });
                match result {
                    Ok(iterations) => {
                        if let Some(n) = iterations {
                            tally.iterations += n;
                            tally.updates += 1;
                        }
                    }
                    Err(e) => {
                        failure = Some(format!("step {}: {e}", k + 1));
                        break;
                    }
                }
                let (nav, p) = est.snapshot();
                if nav.position.iter().any(|v| !v.is_finite()) {
                    failure = Some(format!("step {}: estimate diverged", k + 1));
                    break;
                }
                last = (s.truth.clone(), nav.clone());
                record(k + 1, s.t, &s.truth, nav, &p, &mut tally);
            }
        }
    }

    let (truth, estimate) = &last;
    let (drift, ext_rot, ext_trans) = if failure.is_some() {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY)
    } else {
        let rot = ikfom_core::manifold::so3::log(&(estimate.ext_rotation.transpose() * truth.ext_rotation));
        (
            (estimate.position - truth.position).norm(),
            rot.norm().to_degrees(),
            (estimate.ext_translation - truth.ext_translation).norm(),
        )
    };
    let summary = TrialSummary {
        seed,
        filter: label(kind, normalization),
        steps: tally.steps,
        mean_nees: tally.nees_sum / tally.nees_count.max(1) as f64,
        nees_failures: tally.nees_failures,
        containment_rate: ratio(tally.inside, tally.axes),
        gravity_containment: ratio(tally.gravity_inside, tally.steps),
        final_drift_m: drift,
        iterations_mean: ratio(tally.iterations, tally.updates),
        ext_rotation_error_deg: ext_rot,
        ext_translation_error_m: ext_trans,
        failure,
    };
    TrialRecord { summary, steps }
}

/// Generates the trajectory for `seed` and runs the configured filter on it.
pub fn run_trial(cfg: &ScenarioConfig, seed: u64, keep_steps: bool) -> Result<(Trajectory, TrialRecord), ManifoldError> {
    let traj = trajectory::generate(cfg, seed)?;
    let record = run_on(cfg, &traj, seed, cfg.filter, cfg.normalization, keep_steps);
    Ok((traj, record))
}

impl TrialSummary {
    /// Summary of a trial whose truth could not be generated.
    pub fn unsimulated(seed: u64, kind: FilterKind, normalization: Normalization, reason: &ManifoldError) -> Self {
        TrialSummary {
            seed,
            filter: label(kind, normalization),
            steps: 0,
            mean_nees: f64::NAN,
            nees_failures: 0,
            containment_rate: f64::NAN,
            gravity_containment: f64::NAN,
            final_drift_m: f64::INFINITY,
            iterations_mean: f64::NAN,
            ext_rotation_error_deg: f64::INFINITY,
            ext_translation_error_m: f64::INFINITY,
            failure: Some(format!("truth generation: {reason}")),
        }
    }
}
