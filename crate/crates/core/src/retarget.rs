//! Differential-IK shadowing of human elbow/wrist keypoints.
//!
//! Human keypoints are mapped into the robot world by one similarity
//! transform shared by both arms, then each arm tracks its elbow and wrist
//! targets with damped least squares.

use std::io::BufRead;

use nalgebra::{Matrix3x6, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{forward_kinematics, keypoints, ELBOW, WRIST};
use crate::model::{Matrix6, RobotModel, Vector6};

#[derive(Debug, Error, PartialEq)]
pub enum RetargetError {
    #[error("human arm length {0} m is degenerate (< 0.01 m)")]
    DegenerateArm(f64),
    #[error("frame {index}: timestamps must be strictly increasing")]
    NonMonotonicTime { index: usize },
    #[error("initial configuration of the {arm} arm violates joint limits")]
    InitOutsideLimits { arm: &'static str },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Raw human landmarks of one arm, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanArm {
    pub shoulder: [f64; 3],
    pub elbow: [f64; 3],
    pub wrist: [f64; 3],
}

impl HumanArm {
    pub fn length(&self) -> f64 {
        let [s, e, w] = [self.shoulder, self.elbow, self.wrist].map(Vector3::from);
        (e - s).norm() + (w - e).norm()
    }
}

/// One line of the keypoint input file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanFrame {
    pub t: f64,
    pub left: HumanArm,
    pub right: HumanArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmTargets {
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
}

impl ArmTargets {
    pub fn of(model: &RobotModel, q: &Vector6) -> Self {
        let k = keypoints(model, q);
        Self {
            elbow: k.elbow,
            wrist: k.wrist,
        }
    }
}

/// Elbow and wrist targets for both arms in the robot world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub t: f64,
    pub left: ArmTargets,
    pub right: ArmTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetConfig {
    pub w_elbow: f64,
    pub w_wrist: f64,
    /// Damping λ of the least-squares solve.
    pub damping: f64,
    /// Integration step of one IK iteration, s.
    pub dt: f64,
    /// Fraction of each joint's velocity limit the solver may command.
    pub velocity_scale: f64,
    /// Stop iterating on a frame once both keypoints are this close, m.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            w_elbow: 0.3,
            w_wrist: 1.0,
            damping: 1e-4,
            dt: 0.005,
            velocity_scale: 1.0,
            tolerance: 5e-4,
            max_iterations: 20,
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<(), RetargetError> {
        let bad = |m: &str| Err(RetargetError::InvalidConfig(m.into()));
        if !(self.w_elbow >= 0.0 && self.w_wrist >= 0.0) {
            return bad("weights must be >= 0");
        }
        if !(self.damping > 0.0) {
            return bad("damping must be > 0");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if !(self.velocity_scale > 0.0 && self.velocity_scale <= 1.0) {
            return bad("velocity_scale must be in (0, 1]");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be >= 0");
        }
        Ok(())
    }
}

/// Shoulder point of an arm (where the first three axes meet).
pub fn robot_shoulder(model: &RobotModel) -> Vector3<f64> {
    forward_kinematics(model, &Vector6::zeros()).joint_origin(2)
}

/// Maps one human frame into robot targets.
///
/// Both arms share one similarity transform: the human shoulder midpoint goes
/// to the robot shoulder midpoint and everything scales by
/// `robot arm length / human_arm_length`, so the inter-hand vector is scaled
/// rigidly.
pub fn map_human_to_robot(
    raw: &HumanFrame,
    human_arm_length: f64,
    left: &RobotModel,
    right: &RobotModel,
) -> Result<KeypointFrame, RetargetError> {
    if !(human_arm_length >= 0.01) {
        return Err(RetargetError::DegenerateArm(human_arm_length));
    }
    let robot_length = 0.5 * (left.arm_length() + right.arm_length());
    let scale = robot_length / human_arm_length;
    let human_mid = 0.5 * (Vector3::from(raw.left.shoulder) + Vector3::from(raw.right.shoulder));
    let robot_mid = 0.5 * (robot_shoulder(left) + robot_shoulder(right));
    let map = |p: [f64; 3]| robot_mid + (Vector3::from(p) - human_mid) * scale;
    let arm = |a: &HumanArm| ArmTargets {
        elbow: map(a.elbow),
        wrist: map(a.wrist),
    };
    Ok(KeypointFrame {
        t: raw.t,
        left: arm(&raw.left),
        right: arm(&raw.right),
    })
}

/// Mean of both arms' lengths in the first frame.
pub fn human_arm_length(frames: &[HumanFrame]) -> Option<f64> {
    frames.first().map(|f| 0.5 * (f.left.length() + f.right.length()))
}

/// Damped least-squares joint velocity toward `targets`.
pub fn retarget_step(model: &RobotModel, q: &Vector6, targets: &ArmTargets, config: &RetargetConfig) -> Vector6 {
    let fk = forward_kinematics(model, q);
    let tasks: [(f64, Matrix3x6<f64>, Vector3<f64>); 2] = [
        (config.w_elbow, fk.point_jacobian(ELBOW, &fk.joint_origin(ELBOW)), targets.elbow - fk.joint_origin(ELBOW)),
        (config.w_wrist, fk.point_jacobian(WRIST, &fk.joint_origin(WRIST)), targets.wrist - fk.joint_origin(WRIST)),
    ];
    let qdot = dls(&tasks, config.damping, config.dt);
    limit_velocity(model, q, qdot, config.velocity_scale)
}

/// Solves `(Σ wᵢ JᵢᵀJᵢ + λI) q̇ = Σ wᵢ Jᵢᵀ eᵢ/dt`.
pub fn dls(tasks: &[(f64, Matrix3x6<f64>, Vector3<f64>)], damping: f64, dt: f64) -> Vector6 {
    let mut a = Matrix6::identity() * damping;
    let mut b = Vector6::zeros();
    for (w, j, e) in tasks {
        a += j.transpose() * j * *w;
        b += j.transpose() * (e / dt) * *w;
    }
    a.cholesky().map(|c| c.solve(&b)).unwrap_or_else(Vector6::zeros)
}

/// Zeroes motion into active limits, then scales uniformly so every joint
/// stays within `scale` times its velocity limit.
pub fn limit_velocity(model: &RobotModel, q: &Vector6, mut qdot: Vector6, scale: f64) -> Vector6 {
    for (j, spec) in model.joints.iter().enumerate() {
        if (q[j] <= spec.lower && qdot[j] < 0.0) || (q[j] >= spec.upper && qdot[j] > 0.0) {
            qdot[j] = 0.0;
        }
    }
    let ratio = (0..qdot.len())
        .map(|j| qdot[j].abs() / (model.joints[j].velocity_limit * scale))
        .fold(0.0, f64::max);
    if ratio > 1.0 {
        qdot /= ratio;
    }
    qdot
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmSample {
    pub q: Vector6,
    pub qdot: Vector6,
    pub elbow_error: f64,
    pub wrist_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetargetSample {
    pub t: f64,
    pub left: ArmSample,
    pub right: ArmSample,
}

/// Tracks one arm for one frame: up to `max_iterations` IK steps, stopping
/// once both keypoints are within tolerance.
pub fn track_frame(model: &RobotModel, q: &Vector6, targets: &ArmTargets, config: &RetargetConfig) -> (Vector6, f64, f64) {
    let mut q = *q;
    let errors = |q: &Vector6| {
        let k = ArmTargets::of(model, q);
        ((k.elbow - targets.elbow).norm(), (k.wrist - targets.wrist).norm())
    };
    for _ in 0..config.max_iterations {
        let (e, w) = errors(&q);
        if e <= config.tolerance && w <= config.tolerance {
            break;
        }
        let qdot = retarget_step(model, &q, targets, config);
        q = model.clamp_to_limits(&(q + qdot * config.dt));
    }
    let (e, w) = errors(&q);
    (q, e, w)
}

/// Sequential per-frame tracking for both arms. `qdot` is the frame-to-frame
/// difference quotient (zero on the first frame).
pub fn retarget_trajectory(
    left: &RobotModel,
    right: &RobotModel,
    frames: &[KeypointFrame],
    config: &RetargetConfig,
    q0: [Vector6; 2],
) -> Result<Vec<RetargetSample>, RetargetError> {
    config.validate()?;
    for (arm, model, q) in [("left", left, &q0[0]), ("right", right, &q0[1])] {
        if !model.within_limits(q) {
            return Err(RetargetError::InitOutsideLimits { arm });
        }
    }
    for (i, w) in frames.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(RetargetError::NonMonotonicTime { index: i + 1 });
        }
    }
    let mut out: Vec<RetargetSample> = Vec::with_capacity(frames.len());
    let mut q = q0;
    for frame in frames {
        let mut arm = |i: usize, model: &RobotModel, targets: &ArmTargets| {
            let (qn, e, w) = track_frame(model, &q[i], targets, config);
            let qdot = match out.last() {
                Some(prev) => (qn - q[i]) / (frame.t - prev.t),
                None => Vector6::zeros(),
            };
            q[i] = qn;
            ArmSample {
                q: qn,
                qdot,
                elbow_error: e,
                wrist_error: w,
            }
        };
        let l = arm(0, left, &frame.left);
        let r = arm(1, right, &frame.right);
        out.push(RetargetSample {
            t: frame.t,
            left: l,
            right: r,
        });
    }
    Ok(out)
}

/// Reads `{"t":…, "left":{"shoulder":…,"elbow":…,"wrist":…}, "right":{…}}` lines.
pub fn read_human_frames<R: BufRead>(reader: R) -> Result<Vec<HumanFrame>, RetargetError> {
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| RetargetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: HumanFrame = serde_json::from_str(&line).map_err(|e| RetargetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

/// `t,q1..q6` for one arm.
pub fn arm_csv(samples: &[RetargetSample], left: bool) -> String {
    let mut s = String::from("t,q1,q2,q3,q4,q5,q6\n");
    for sample in samples {
        let arm = if left { &sample.left } else { &sample.right };
        s += &format!("{:.6}", sample.t);
        for v in arm.q.iter() {
            s += &format!(",{v:.9}");
        }
        s.push('\n');
    }
    s
}
