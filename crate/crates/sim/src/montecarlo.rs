//! Independent seeded trials run in parallel and reduced in index order.

use rayon::prelude::*;
use serde::Serialize;

use ikfom_core::models::lidar_inertial::tangent;

use crate::config::{FilterKind, Normalization, ScenarioConfig};
use crate::trajectory;
use crate::trial::{run_on, TrialSummary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

fn quantiles(values: impl Iterator<Item = f64>) -> Quantiles {
    let v = sorted(values);
    Quantiles { p05: quantile(&v, 0.05), p50: quantile(&v, 0.5), p95: quantile(&v, 0.95) }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Averages are step-weighted over trials that finished; failed trials are
/// only counted in `failed_trials` and listed in `per_trial`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub mean_nees: f64,
    pub containment_rate: f64,
    pub final_drift_m: f64,
    pub iterations_mean: f64,
    pub trials: usize,
    pub failed_trials: usize,
    /// Chi-square mean for a consistent filter.
    pub nees_reference: usize,
    /// Spread of the per-trial mean NEES.
    pub trial_nees: Quantiles,
    pub nees_failures: usize,
    pub gravity_containment: f64,
    pub drift: Quantiles,
    pub ext_rotation_error_deg_max: f64,
    pub ext_translation_error_m_max: f64,
    pub per_trial: Vec<TrialSummary>,
}

/// Trial `i` uses seed `cfg.seed ^ i`.
pub fn run_trials(cfg: &ScenarioConfig, kind: FilterKind, normalization: Normalization) -> Vec<TrialSummary> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.trial_seed(i);
            match trajectory::generate(cfg, seed) {
                Ok(traj) => run_on(cfg, &traj, seed, kind, normalization, false).summary,
                Err(e) => TrialSummary::unsimulated(seed, kind, normalization, &e),
            }
        })
        .collect()
}

pub fn summarize(trials: Vec<TrialSummary>) -> MonteCarloSummary {
    let ok: Vec<&TrialSummary> = trials.iter().filter(|t| t.failure.is_none()).collect();
    let steps: usize = ok.iter().map(|t| t.steps).sum();
    let weighted = |f: fn(&TrialSummary) -> f64| {
        if steps == 0 {
            f64::NAN
        } else {
            ok.iter().map(|t| f(t) * t.steps as f64).sum::<f64>() / steps as f64
        }
    };
    MonteCarloSummary {
        mean_nees: weighted(|t| t.mean_nees),
        containment_rate: weighted(|t| t.containment_rate),
        final_drift_m: mean(ok.iter().map(|t| t.final_drift_m)),
        iterations_mean: mean(ok.iter().map(|t| t.iterations_mean)),
        trials: trials.len(),
        failed_trials: trials.len() - ok.len(),
        nees_reference: tangent::DIM,
        trial_nees: quantiles(ok.iter().map(|t| t.mean_nees)),
        nees_failures: trials.iter().map(|t| t.nees_failures).sum(),
        gravity_containment: weighted(|t| t.gravity_containment),
        drift: quantiles(trials.iter().map(|t| t.final_drift_m)),
        ext_rotation_error_deg_max: ok.iter().map(|t| t.ext_rotation_error_deg).fold(f64::NAN, f64::max),
        ext_translation_error_m_max: ok.iter().map(|t| t.ext_translation_error_m).fold(f64::NAN, f64::max),
        per_trial: trials,
    }
}

pub fn run_monte_carlo(cfg: &ScenarioConfig) -> MonteCarloSummary {
    summarize(run_trials(cfg, cfg.filter, cfg.normalization))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTrial {
    pub seed: u64,
    pub ikfom_drift_m: f64,
    pub rescale_drift_m: f64,
    pub pseudo_measurement_drift_m: f64,
    pub ikfom_failure: Option<String>,
    pub rescale_failure: Option<String>,
    pub pseudo_measurement_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantComparison {
    pub variant: Normalization,
    /// Fraction of trials where the manifold filter drifted no more than the baseline.
    pub ikfom_not_worse_rate: f64,
    /// Median of baseline drift over manifold-filter drift.
    pub median_drift_ratio: f64,
    pub baseline_median_drift_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub trials: usize,
    /// Largest body rate reached by the generated trajectories.
    pub peak_rate_dps: f64,
    pub ikfom_median_drift_m: f64,
    pub variants: Vec<VariantComparison>,
    pub pairs: Vec<PairedTrial>,
}

/// Runs the manifold filter and both baseline variants on the same trajectories.
pub fn compare(cfg: &ScenarioConfig) -> Comparison {
    let runs: Vec<(f64, PairedTrial)> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.trial_seed(i);
            let generated = trajectory::generate(cfg, seed);
            let run = |kind, normalization| match &generated {
                Ok(traj) => run_on(cfg, traj, seed, kind, normalization, false).summary,
                Err(e) => TrialSummary::unsimulated(seed, kind, normalization, e),
            };
            let peak = generated.as_ref().map_or(0.0, |t| t.peak_rate(cfg).to_degrees());
            let a = run(FilterKind::Ikfom, cfg.normalization);
            let b = run(FilterKind::Quat, Normalization::Rescale);
            let c = run(FilterKind::Quat, Normalization::PseudoMeasurement);
            let pair = PairedTrial {
                seed,
                ikfom_drift_m: a.final_drift_m,
                rescale_drift_m: b.final_drift_m,
                pseudo_measurement_drift_m: c.final_drift_m,
                ikfom_failure: a.failure,
                rescale_failure: b.failure,
                pseudo_measurement_failure: c.failure,
            };
            (peak, pair)
        })
        .collect();
    let peak_rate_dps = runs.iter().map(|(p, _)| *p).fold(0.0, f64::max);
    let pairs: Vec<PairedTrial> = runs.into_iter().map(|(_, p)| p).collect();
    let variant = |variant: Normalization, drift: fn(&PairedTrial) -> f64| {
        let not_worse = pairs.iter().filter(|p| p.ikfom_drift_m <= drift(p)).count();
        let ratios = sorted(pairs.iter().map(|p| drift(p) / p.ikfom_drift_m));
        VariantComparison {
            variant,
            ikfom_not_worse_rate: not_worse as f64 / pairs.len().max(1) as f64,
            median_drift_ratio: quantile(&ratios, 0.5),
            baseline_median_drift_m: quantile(&sorted(pairs.iter().map(drift)), 0.5),
        }
    };
    Comparison {
        trials: pairs.len(),
        peak_rate_dps,
        ikfom_median_drift_m: quantile(&sorted(pairs.iter().map(|p| p.ikfom_drift_m)), 0.5),
        variants: vec![
            variant(Normalization::Rescale, |p| p.rescale_drift_m),
            variant(Normalization::PseudoMeasurement, |p| p.pseudo_measurement_drift_m),
        ],
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert!((quantile(&v, 0.1) - 1.4).abs() < 1e-12);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
