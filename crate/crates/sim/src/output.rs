//! CSV and JSON writers. Numbers use Rust's shortest round-trip formatting,
//! so identical runs produce identical bytes.

use std::io::{self, Write};

use ikfom_core::manifold::{so3, sphere};
use ikfom_core::models::lidar_inertial::{NavState, BLOCKS};
use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::trial::{StepRecord, TrialRecord};

pub const CSV_HEADER: &str = "step,t,block,component,truth,estimate,error,sigma3";

/// The four headline numbers of a single run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mean_nees: f64,
    pub containment_rate: f64,
    pub final_drift_m: f64,
    pub iterations_mean: f64,
}

impl From<&TrialRecord> for RunSummary {
    fn from(r: &TrialRecord) -> Self {
        let s = &r.summary;
        RunSummary {
            mean_nees: s.mean_nees,
            containment_rate: s.containment_rate,
            final_drift_m: s.final_drift_m,
            iterations_mean: s.iterations_mean,
        }
    }
}

/// Plot-ready coordinates of one block: raw values for vectors, the
/// rotation vector for rotations, and the tangent offset from
/// `gravity_reference` for gravity.
fn block_values(nav: &NavState, block: &str, gravity_reference: &Vector3<f64>) -> DVector<f64> {
    let v = |x: &Vector3<f64>| DVector::from_column_slice(x.as_slice());
    match block {
        "position" => v(&nav.position),
        "velocity" => v(&nav.velocity),
        "attitude" => v(&so3::log(&nav.attitude)),
        "accel_bias" => v(&nav.accel_bias),
        "gyro_bias" => v(&nav.gyro_bias),
        "gravity" => {
            let d = sphere::boxminus(&nav.gravity, gravity_reference).unwrap_or_else(|_| nalgebra::Vector2::repeat(f64::NAN));
            DVector::from_column_slice(d.as_slice())
        }
        "ext_rotation" => v(&so3::log(&nav.ext_rotation)),
        "ext_translation" => v(&nav.ext_translation),
        other => unreachable!("unknown block {other}"),
    }
}

fn write_step(out: &mut impl Write, s: &StepRecord, gravity_reference: &Vector3<f64>) -> io::Result<()> {
    for (block, offset, len) in BLOCKS {
        let truth = block_values(&s.truth, block, gravity_reference);
        let estimate = block_values(&s.estimate, block, gravity_reference);
        for c in 0..len {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.step,
                s.t,
                block,
                c,
                truth[c],
                estimate[c],
                s.error[offset + c],
                s.sigma3[offset + c]
            )?;
        }
    }
    Ok(())
}

/// One row per step, block and component.
pub fn write_csv(out: &mut impl Write, record: &TrialRecord, gravity_reference: &Vector3<f64>) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in &record.steps {
        write_step(out, s, gravity_reference)?;
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}
