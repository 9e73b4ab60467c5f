//! Sensor-free torque estimation, PD torque control and payload statics.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::joint_torque_to_actuator;
use crate::model::{RobotModel, Vector6, JOINTS_PER_ARM};
use crate::sim::dynamics::{inverse_dynamics, Wrench};

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration table needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index}: current must be strictly increasing")]
    CurrentNotIncreasing { index: usize },
    #[error("sample {index}: torque must be strictly increasing")]
    TorqueNotIncreasing { index: usize },
    #[error("sample {index}: non-finite value")]
    NonFinite { index: usize },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Monotone current/torque samples measured at the actuator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationSamples", into = "CalibrationSamples")]
pub struct CalibrationTable {
    samples: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationSamples {
    samples: Vec<[f64; 2]>,
}

impl TryFrom<CalibrationSamples> for CalibrationTable {
    type Error = CalibrationError;

    fn try_from(raw: CalibrationSamples) -> Result<Self, Self::Error> {
        CalibrationTable::new(raw.samples.into_iter().map(|[i, t]| (i, t)).collect())
    }
}

impl From<CalibrationTable> for CalibrationSamples {
    fn from(t: CalibrationTable) -> Self {
        CalibrationSamples {
            samples: t.samples.into_iter().map(|(i, t)| [i, t]).collect(),
        }
    }
}

impl CalibrationTable {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, CalibrationError> {
        let table = Self { samples };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.samples.len() < 2 {
            return Err(CalibrationError::TooFewSamples(self.samples.len()));
        }
        for (index, &(i, t)) in self.samples.iter().enumerate() {
            if !(i.is_finite() && t.is_finite()) {
                return Err(CalibrationError::NonFinite { index });
            }
            if index > 0 {
                let (pi, pt) = self.samples[index - 1];
                if !(i > pi) {
                    return Err(CalibrationError::CurrentNotIncreasing { index });
                }
                if !(t > pt) {
                    return Err(CalibrationError::TorqueNotIncreasing { index });
                }
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Reads `current_A,torque_Nm` rows sorted by current.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, CalibrationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| CalibrationError::Csv {
            line: 1,
            message: e.to_string(),
        })?;
        if headers.len() != 2 || &headers[0] != "current_A" || &headers[1] != "torque_Nm" {
            return Err(CalibrationError::Csv {
                line: 1,
                message: "expected header `current_A,torque_Nm`".into(),
            });
        }
        let mut samples = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| CalibrationError::Csv {
                line,
                message: e.to_string(),
            })?;
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| CalibrationError::Csv {
                    line,
                    message: format!("`{s}`: {e}"),
                })
            };
            if record.len() != 2 {
                return Err(CalibrationError::Csv {
                    line,
                    message: format!("expected 2 fields, found {}", record.len()),
                });
            }
            samples.push((parse(&record[0])?, parse(&record[1])?));
        }
        Self::new(samples).map_err(|e| match e {
            CalibrationError::CurrentNotIncreasing { index }
            | CalibrationError::TorqueNotIncreasing { index }
            | CalibrationError::NonFinite { index } => CalibrationError::Csv {
                line: index + 2,
                message: e.to_string(),
            },
            other => other,
        })
    }
}

/// Piecewise-linear interpolation through `(x, y)` knots, extrapolating with
/// the first or last segment's slope outside the sampled range.
fn interp_extrapolate(points: impl Fn(usize) -> (f64, f64), n: usize, x: f64) -> f64 {
    let seg = if x <= points(0).0 {
        0
    } else if x >= points(n - 1).0 {
        n - 2
    } else {
        // first knot strictly greater than x, minus one
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if points(mid).0 <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let (x0, y0) = points(seg);
    let (x1, y1) = points(seg + 1);
    if x == x0 {
        return y0;
    }
    if x == x1 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

pub fn torque_from_current(table: &CalibrationTable, current: f64) -> f64 {
    let s = &table.samples;
    interp_extrapolate(|k| s[k], s.len(), current)
}

pub fn current_from_torque(table: &CalibrationTable, torque: f64) -> f64 {
    let s = &table.samples;
    interp_extrapolate(|k| (s[k].1, s[k].0), s.len(), torque)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: Vector6,
    pub kd: Vector6,
}

impl PdGains {
    pub fn uniform(kp: f64, kd: f64) -> Self {
        Self {
            kp: Vector6::repeat(kp),
            kd: Vector6::repeat(kd),
        }
    }
}

/// `τ_j = clamp(kp_j (q_des_j − q_j) − kd_j q̇_j, ±limit_j)`.
pub fn pd_torque(
    gains: &PdGains,
    q_des: &Vector6,
    q: &Vector6,
    qdot: &Vector6,
    limits: &Vector6,
) -> Vector6 {
    Vector6::from_fn(|j, _| {
        let raw = gains.kp[j] * (q_des[j] - q[j]) - gains.kd[j] * qdot[j];
        raw.clamp(-limits[j], limits[j])
    })
}

/// Joint torques holding the arm static against gravity with `payload_mass`
/// lumped at the tool point.
pub fn gravity_torques(model: &RobotModel, q: &Vector6, payload_mass: f64, gravity: f64) -> Vector6 {
    assert!(payload_mass >= 0.0, "payload mass must be non-negative");
    inverse_dynamics(
        model,
        q,
        &Vector6::zeros(),
        &Vector6::zeros(),
        &Wrench::zero(),
        payload_mass,
        gravity,
    )
}

/// Per-actuator `|current| / nominal_current` for a joint-space torque.
pub fn current_ratios(model: &RobotModel, tau_joint: &Vector6) -> Vector6 {
    let tau_act = joint_torque_to_actuator(model, tau_joint);
    Vector6::from_fn(|j, _| {
        let table = model.calibration_for(j);
        // Tables are measured in the positive quadrant; the map is applied symmetrically.
        let current = current_from_torque(table, tau_act[j].abs());
        current.abs() / model.actuators[j].nominal_current
    })
}

/// Upper arm hanging down, forearm horizontal and pointing forward.
pub fn lifting_posture() -> Vector6 {
    let mut q = Vector6::zeros();
    q[2] = std::f64::consts::FRAC_PI_2;
    q[3] = -std::f64::consts::FRAC_PI_2;
    debug_assert_eq!(q.len(), JOINTS_PER_ARM);
    q
}
