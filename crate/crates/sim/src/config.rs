//! Scenario configuration shared by the library entry points and the CLI.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Static,
    Circle,
    FastRotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    /// Manifold-based iterated filter.
    Ikfom,
    /// Quaternion filter on a flat 26-dimensional state.
    Quat,
}

/// How the quaternion baseline keeps its constrained blocks on their manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Rescale after every step and leave the covariance untouched.
    Rescale,
    /// Fuse unit-norm pseudo-measurements alongside each scan, then rescale.
    PseudoMeasurement,
}

macro_rules! kebab_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value `{other}` (expected one of: {})", [$($name),+].join(", "))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self { $(v if *v == $variant => $name,)+ _ => unreachable!() };
                f.write_str(name)
            }
        }
    };
}

kebab_enum!(Scenario { "static" => Scenario::Static, "circle" => Scenario::Circle, "fast-rotation" => Scenario::FastRotation });
kebab_enum!(FilterKind { "ikfom" => FilterKind::Ikfom, "quat" => FilterKind::Quat });
kebab_enum!(Normalization { "rescale" => Normalization::Rescale, "pseudo-measurement" => Normalization::PseudoMeasurement });

/// Everything needed to reproduce a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub seed: u64,
    /// Simulated time in seconds.
    pub duration: f64,
    /// IMU sampling period in seconds.
    pub dt: f64,
    pub trials: usize,
    /// Extra update iterations after the first.
    pub nmax: usize,
    pub filter: FilterKind,
    pub normalization: Normalization,
    /// A scan arrives every this many IMU samples.
    pub scan_every: usize,
    pub features_per_scan: usize,
    pub planes: usize,
    /// Features are drawn within this distance of the sensor.
    pub feature_range: f64,
    pub feature_std: f64,
    pub accel_noise: f64,
    pub gyro_noise: f64,
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
    pub gravity: f64,
    /// Peak angular rate of the fast-rotation scenario in degrees per second.
    pub peak_rate_dps: f64,
    pub init_position_std: f64,
    pub init_velocity_std: f64,
    pub init_attitude_std_deg: f64,
    pub init_accel_bias_std: f64,
    pub init_gyro_bias_std: f64,
    pub init_gravity_std_deg: f64,
    pub init_ext_rotation_std_deg: f64,
    pub init_ext_translation_std: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: Scenario::Circle,
            seed: 0,
            duration: 10.0,
            dt: 0.005,
            trials: 1,
            nmax: 4,
            filter: FilterKind::Ikfom,
            normalization: Normalization::PseudoMeasurement,
            scan_every: 4,
            features_per_scan: 10,
            planes: 20,
            feature_range: 6.0,
            feature_std: 0.02,
            accel_noise: 0.05,
            gyro_noise: 0.005,
            accel_bias_walk: 1e-3,
            gyro_bias_walk: 1e-4,
            gravity: 9.81,
            peak_rate_dps: 400.0,
            init_position_std: 0.05,
            init_velocity_std: 0.05,
            init_attitude_std_deg: 1.0,
            init_accel_bias_std: 0.05,
            init_gyro_bias_std: 0.005,
            init_gravity_std_deg: 1.0,
            init_ext_rotation_std_deg: 2.0,
            init_ext_translation_std: 0.05,
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        let cfg: ScenarioConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: shown, message: e.to_string() })?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: shown, message: e.to_string() })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of IMU samples in a trial.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Seed for trial `index`.
    pub fn trial_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, reason: format!("must be positive, got {v}") })
            }
        }
        fn non_negative(key: &'static str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, reason: format!("must be non-negative, got {v}") })
            }
        }
        fn at_least_one(key: &'static str, v: usize) -> Result<(), ConfigError> {
            if v >= 1 {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, reason: "must be at least 1".into() })
            }
        }
        positive("duration", self.duration)?;
        positive("dt", self.dt)?;
        positive("gravity", self.gravity)?;
        positive("feature_range", self.feature_range)?;
        positive("feature_std", self.feature_std)?;
        non_negative("peak_rate_dps", self.peak_rate_dps)?;
        for (key, v) in [
            ("accel_noise", self.accel_noise),
            ("gyro_noise", self.gyro_noise),
            ("accel_bias_walk", self.accel_bias_walk),
            ("gyro_bias_walk", self.gyro_bias_walk),
            ("init_position_std", self.init_position_std),
            ("init_velocity_std", self.init_velocity_std),
            ("init_attitude_std_deg", self.init_attitude_std_deg),
            ("init_accel_bias_std", self.init_accel_bias_std),
            ("init_gyro_bias_std", self.init_gyro_bias_std),
            ("init_gravity_std_deg", self.init_gravity_std_deg),
            ("init_ext_rotation_std_deg", self.init_ext_rotation_std_deg),
            ("init_ext_translation_std", self.init_ext_translation_std),
        ] {
            non_negative(key, v)?;
        }
        if self.steps() == 0 {
            return Err(ConfigError::Invalid { key: "duration", reason: "shorter than one IMU period".into() });
        }
        at_least_one("trials", self.trials)?;
        at_least_one("scan_every", self.scan_every)?;
        at_least_one("features_per_scan", self.features_per_scan)?;
        at_least_one("planes", self.planes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enums_roundtrip_through_strings() {
        for s in [Scenario::Static, Scenario::Circle, Scenario::FastRotation] {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert_eq!("quat".parse::<FilterKind>().unwrap(), FilterKind::Quat);
        assert!("kalman".parse::<FilterKind>().is_err());
    }

    #[test]
    fn toml_accepts_partial_and_rejects_unknown_keys() {
        let cfg: ScenarioConfig = toml::from_str("scenario = \"fast-rotation\"\nseed = 9\nnmax = 2\n").unwrap();
        assert_eq!(cfg.scenario, Scenario::FastRotation);
        assert_eq!((cfg.seed, cfg.nmax), (9, 2));
        assert_eq!(cfg.dt, ScenarioConfig::default().dt);
        assert!(toml::from_str::<ScenarioConfig>("sed = 3\n").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let cfg = ScenarioConfig { dt: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid { key: "dt", .. })));
        let cfg = ScenarioConfig { duration: 0.001, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(ScenarioConfig::default().validate().is_ok());
    }

    #[test]
    fn trial_seeds_are_xor_of_index() {
        let cfg = ScenarioConfig { seed: 0b1010, ..Default::default() };
        assert_eq!(cfg.trial_seed(0), 0b1010);
        assert_eq!(cfg.trial_seed(3), 0b1001);
    }
}
