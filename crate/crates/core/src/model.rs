//! Robot and scene descriptions.
//!
//! Descriptions are TOML documents carrying a `format_version` field. One file
//! describes one arm; a bimanual setup is two files (or two instances of the
//! built-in arm) that differ only in `base`. The scene lives in its own file.
//!
//! The built-in arm geometry is an estimate: only the moving mass (1.09 kg,
//! excluding gripper) and the 2.5 kg payload rating are known. Link lengths are
//! upper arm 0.28 m, forearm 0.28 m, wrist to tool point 0.04 m. The two wrist
//! actuator frames are placed coincident at the wrist centre.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{CalibrationError, CalibrationTable};
use crate::kinematics::FramePose;

pub const JOINTS_PER_ARM: usize = 6;
pub const FORMAT_VERSION: u32 = 1;

pub type Vector6 = SVector<f64, 6>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Invariant { field: String, message: String },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl ModelError {
    fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invariant {
            field: field.into(),
            message: message.into(),
        }
    }

    fn from_toml(text: &str, err: toml::de::Error) -> Self {
        let (line, column) = err
            .span()
            .map(|span| line_col(text, span.start))
            .unwrap_or((0, 0));
        ModelError::Parse {
            line,
            column,
            message: err.message().to_string(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let prefix = &text[..offset.min(text.len())];
    let line = prefix.matches('\n').count() + 1;
    let column = prefix.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, column)
}

/// Translation plus roll/pitch/yaw (`R = Rz(yaw) Ry(pitch) Rx(roll)`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Placement {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Placement {
    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            xyz: [x, y, z],
            rpy: [0.0; 3],
        }
    }

    pub fn to_pose(&self) -> FramePose {
        FramePose::new(
            Rotation3::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]),
            Vector3::from(self.xyz),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    /// Index of the parent link, `None` for the link attached to the base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    /// Joint frame relative to the parent link frame at zero joint angle.
    pub origin: Placement,
    /// Revolute axis in the joint frame.
    pub axis: [f64; 3],
    pub mass: f64,
    /// Centre of mass in the link frame.
    pub com: [f64; 3],
    /// Inertia about the centre of mass, link frame.
    pub inertia: [[f64; 3]; 3],
}

impl Link {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub velocity_limit: f64,
    pub torque_limit: f64,
}

impl JointSpec {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    #[serde(default = "default_gear_ratio")]
    pub gear_ratio: f64,
    pub nominal_current: f64,
    pub calibration_id: String,
    /// Motor-side rotor inertia; reflected as `rotor_inertia * gear_ratio²`.
    #[serde(default)]
    pub rotor_inertia: f64,
}

fn default_gear_ratio() -> f64 {
    10.0
}

impl ActuatorSpec {
    pub fn reflected_inertia(&self) -> f64 {
        self.rotor_inertia * self.gear_ratio * self.gear_ratio
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub format_version: u32,
    pub name: String,
    /// Lumped gripper mass at the tool point, kg.
    pub gripper_mass: f64,
    /// Rated payload, kg.
    pub payload_rating: f64,
    /// Rows of `C` in `q_joint = C q_act`.
    pub coupling: [[f64; 6]; 6],
    pub base: Placement,
    /// Tool point relative to the last link frame.
    pub ee_offset: Placement,
    pub links: Vec<Link>,
    pub joints: Vec<JointSpec>,
    pub actuators: Vec<ActuatorSpec>,
    #[serde(default)]
    pub calibrations: BTreeMap<String, CalibrationTable>,
}

impl RobotModel {
    pub fn coupling_matrix(&self) -> Matrix6 {
        Matrix6::from_fn(|r, c| self.coupling[r][c])
    }

    pub fn coupling_inverse(&self) -> Matrix6 {
        self.coupling_matrix()
            .try_inverse()
            .expect("validated models have an invertible coupling matrix")
    }

    pub fn lower_limits(&self) -> Vector6 {
        Vector6::from_fn(|i, _| self.joints[i].lower)
    }

    pub fn upper_limits(&self) -> Vector6 {
        Vector6::from_fn(|i, _| self.joints[i].upper)
    }

    pub fn velocity_limits(&self) -> Vector6 {
        Vector6::from_fn(|i, _| self.joints[i].velocity_limit)
    }

    pub fn torque_limits(&self) -> Vector6 {
        Vector6::from_fn(|i, _| self.joints[i].torque_limit)
    }

    pub fn clamp_to_limits(&self, q: &Vector6) -> Vector6 {
        Vector6::from_fn(|i, _| self.joints[i].clamp(q[i]))
    }

    pub fn within_limits(&self, q: &Vector6) -> bool {
        (0..JOINTS_PER_ARM).all(|i| q[i] >= self.joints[i].lower && q[i] <= self.joints[i].upper)
    }

    /// Sum of link masses (the gripper is excluded).
    pub fn moving_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Shoulder-to-wrist length at the zero configuration.
    pub fn arm_length(&self) -> f64 {
        let elbow: Vector3<f64> = self.links[1..=crate::kinematics::ELBOW]
            .iter()
            .map(|l| Vector3::from(l.origin.xyz))
            .sum();
        let forearm: Vector3<f64> = self.links
            [crate::kinematics::ELBOW + 1..=crate::kinematics::WRIST]
            .iter()
            .map(|l| Vector3::from(l.origin.xyz))
            .sum();
        elbow.norm() + forearm.norm()
    }

    pub fn calibration_for(&self, joint: usize) -> &CalibrationTable {
        &self.calibrations[&self.actuators[joint].calibration_id]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ModelError::invariant(
                "format_version",
                format!("unsupported version {}, expected {FORMAT_VERSION}", self.format_version),
            ));
        }
        if self.joints.len() != JOINTS_PER_ARM {
            return Err(ModelError::invariant(
                "joints",
                format!("expected 6 joints, found {}", self.joints.len()),
            ));
        }
        if self.links.len() != JOINTS_PER_ARM {
            return Err(ModelError::invariant(
                "links",
                format!("expected 6 links, found {}", self.links.len()),
            ));
        }
        if self.actuators.len() != JOINTS_PER_ARM {
            return Err(ModelError::invariant(
                "actuators",
                format!("expected 6 actuators, found {}", self.actuators.len()),
            ));
        }
        for (i, link) in self.links.iter().enumerate() {
            let field = |f: &str| format!("links[{i}].{f}");
            let expected_parent = i.checked_sub(1);
            if link.parent != expected_parent {
                return Err(ModelError::invariant(
                    field("parent"),
                    format!("serial chain requires parent {expected_parent:?}"),
                ));
            }
            let axis = Vector3::from(link.axis);
            if !axis.iter().all(|v| v.is_finite()) || (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(ModelError::invariant(
                    field("axis"),
                    format!("axis must have unit norm, got {:?}", link.axis),
                ));
            }
            if !(link.mass >= 0.0) {
                return Err(ModelError::invariant(field("mass"), "mass must be >= 0"));
            }
            let inertia = link.inertia_matrix();
            if (inertia - inertia.transpose()).abs().max() > 1e-12 {
                return Err(ModelError::invariant(field("inertia"), "inertia must be symmetric"));
            }
            let min_eig = inertia.symmetric_eigenvalues().min();
            if min_eig < -1e-12 {
                return Err(ModelError::invariant(
                    field("inertia"),
                    "inertia must be positive semidefinite",
                ));
            }
        }
        for (i, j) in self.joints.iter().enumerate() {
            let field = |f: &str| format!("joints[{i}].{f}");
            if !(j.lower.is_finite() && j.upper.is_finite() && j.lower < j.upper) {
                return Err(ModelError::invariant(field("lower"), "require finite lower < upper"));
            }
            if !(j.velocity_limit > 0.0) {
                return Err(ModelError::invariant(field("velocity_limit"), "must be > 0"));
            }
            if !(j.torque_limit > 0.0) {
                return Err(ModelError::invariant(field("torque_limit"), "must be > 0"));
            }
        }
        for (i, a) in self.actuators.iter().enumerate() {
            let field = |f: &str| format!("actuators[{i}].{f}");
            if !(a.gear_ratio > 0.0) {
                return Err(ModelError::invariant(field("gear_ratio"), "must be > 0"));
            }
            if !(a.nominal_current > 0.0) {
                return Err(ModelError::invariant(field("nominal_current"), "must be > 0"));
            }
            if !(a.rotor_inertia >= 0.0) {
                return Err(ModelError::invariant(field("rotor_inertia"), "must be >= 0"));
            }
            if !self.calibrations.contains_key(&a.calibration_id) {
                return Err(ModelError::invariant(
                    field("calibration_id"),
                    format!("unknown calibration `{}`", a.calibration_id),
                ));
            }
        }
        for (id, table) in &self.calibrations {
            table.validate().map_err(|e: CalibrationError| {
                ModelError::invariant(format!("calibrations.{id}"), e.to_string())
            })?;
        }
        let c = self.coupling_matrix();
        if !c.iter().all(|v| v.is_finite()) || c.determinant().abs() < 1e-9 {
            return Err(ModelError::invariant("coupling", "coupling matrix must be invertible"));
        }
        if !(self.gripper_mass >= 0.0) {
            return Err(ModelError::invariant("gripper_mass", "must be >= 0"));
        }
        if !(self.payload_rating >= 0.0) {
            return Err(ModelError::invariant("payload_rating", "must be >= 0"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ModelError> {
        toml::to_string(self).map_err(|e| ModelError::Serialize(e.to_string()))
    }
}

/// Parses and validates an arm description.
///
/// Calibration ids not defined in the document resolve against the built-in
/// tables (`armada-heavy`, `armada-light`); the resolved tables are stored in
/// the returned model.
pub fn load_model(text: &str) -> Result<RobotModel, ModelError> {
    let mut model: RobotModel =
        toml::from_str(text).map_err(|e| ModelError::from_toml(text, e))?;
    let builtin = builtin_calibrations();
    for a in &model.actuators {
        if !model.calibrations.contains_key(&a.calibration_id) {
            if let Some(t) = builtin.get(&a.calibration_id) {
                model.calibrations.insert(a.calibration_id.clone(), t.clone());
            }
        }
    }
    model.validate()?;
    Ok(model)
}

pub fn builtin_calibrations() -> BTreeMap<String, CalibrationTable> {
    // Synthetic stand-ins for bench measurements, output side of the 1:10 gearbox.
    let heavy = CalibrationTable::new(vec![
        (0.5, 0.30),
        (1.0, 0.78),
        (2.0, 1.74),
        (4.0, 3.66),
        (6.0, 5.55),
        (8.0, 7.38),
        (10.0, 9.12),
        (12.0, 10.78),
    ])
    .expect("builtin heavy table");
    let light = CalibrationTable::new(vec![
        (0.3, 0.10),
        (0.6, 0.24),
        (1.0, 0.43),
        (2.0, 0.90),
        (3.0, 1.36),
        (4.0, 1.80),
        (5.0, 2.22),
    ])
    .expect("builtin light table");
    BTreeMap::from([
        ("armada-heavy".to_string(), heavy),
        ("armada-light".to_string(), light),
    ])
}

fn rod_inertia(mass: f64, length: f64, radius: f64) -> [[f64; 3]; 3] {
    let axial = 0.5 * mass * radius * radius;
    let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    [
        [axial, 0.0, 0.0],
        [0.0, transverse, 0.0],
        [0.0, 0.0, transverse],
    ]
}

fn solid_inertia(mass: f64, size: f64) -> [[f64; 3]; 3] {
    let i = mass * size * size / 6.0;
    [[i, 0.0, 0.0], [0.0, i, 0.0], [0.0, 0.0, i]]
}

pub const UPPER_ARM_LENGTH: f64 = 0.28;
pub const FOREARM_LENGTH: f64 = 0.28;
pub const WRIST_TO_EE: f64 = 0.04;

/// Built-in single arm, base on the table centreline, zero pose pointing along +x.
///
/// Joint order: shoulder yaw (z), shoulder roll (x), shoulder pitch (y),
/// elbow (y, negative is flexion), wrist pitch (y), wrist yaw (z).
pub fn default_armada_model() -> RobotModel {
    let x = [1.0, 0.0, 0.0];
    let y = [0.0, 1.0, 0.0];
    let z = [0.0, 0.0, 1.0];
    let link = |name: &str, parent: Option<usize>, origin: Placement, axis, mass, com, inertia| Link {
        name: name.to_string(),
        parent,
        origin,
        axis,
        mass,
        com,
        inertia,
    };
    let links = vec![
        link("shoulder_yaw_link", None, Placement::default(), z, 0.05, [0.0; 3], solid_inertia(0.05, 0.04)),
        link("shoulder_roll_link", Some(0), Placement::default(), x, 0.06, [0.02, 0.0, 0.0], solid_inertia(0.06, 0.04)),
        link(
            "upper_arm",
            Some(1),
            Placement::default(),
            y,
            0.40,
            [UPPER_ARM_LENGTH / 2.0, 0.0, 0.0],
            rod_inertia(0.40, UPPER_ARM_LENGTH, 0.025),
        ),
        link(
            "forearm",
            Some(2),
            Placement::translation(UPPER_ARM_LENGTH, 0.0, 0.0),
            y,
            0.36,
            [FOREARM_LENGTH / 2.0, 0.0, 0.0],
            rod_inertia(0.36, FOREARM_LENGTH, 0.02),
        ),
        link(
            "wrist_link",
            Some(3),
            Placement::translation(FOREARM_LENGTH, 0.0, 0.0),
            y,
            0.14,
            [0.01, 0.0, 0.0],
            solid_inertia(0.14, 0.04),
        ),
        link("hand", Some(4), Placement::default(), z, 0.08, [0.02, 0.0, 0.0], solid_inertia(0.08, 0.04)),
    ];
    let heavy = |name: &str, lower, upper| {
        (
            JointSpec {
                name: name.to_string(),
                lower,
                upper,
                velocity_limit: 25.0,
                torque_limit: 18.0,
            },
            ActuatorSpec {
                gear_ratio: 10.0,
                nominal_current: 12.0,
                calibration_id: "armada-heavy".to_string(),
                rotor_inertia: 4.0e-5,
            },
        )
    };
    let light = |name: &str, lower, upper| {
        (
            JointSpec {
                name: name.to_string(),
                lower,
                upper,
                velocity_limit: 30.0,
                torque_limit: 4.0,
            },
            ActuatorSpec {
                gear_ratio: 10.0,
                nominal_current: 3.5,
                calibration_id: "armada-light".to_string(),
                rotor_inertia: 1.5e-5,
            },
        )
    };
    let (joints, actuators): (Vec<_>, Vec<_>) = vec![
        heavy("shoulder_yaw", -2.0, 2.0),
        heavy("shoulder_roll", -1.6, 1.6),
        heavy("shoulder_pitch", -2.5, 2.5),
        heavy("elbow", -2.6, 0.1),
        light("wrist_pitch", -1.8, 1.8),
        light("wrist_yaw", -2.5, 2.5),
    ]
    .into_iter()
    .unzip();

    let mut coupling = [[0.0; 6]; 6];
    for (i, row) in coupling.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    // Elbow driven from the base through the parallelogram: q_elbow = a_elbow - a_pitch.
    coupling[3][2] = -1.0;

    RobotModel {
        format_version: FORMAT_VERSION,
        name: "armada".to_string(),
        gripper_mass: 0.20,
        payload_rating: 2.5,
        coupling,
        base: Placement::translation(0.0, 0.0, 0.62),
        ee_offset: Placement::translation(WRIST_TO_EE, 0.0, 0.0),
        links,
        joints,
        actuators,
        calibrations: builtin_calibrations(),
    }
}

/// Left and right arms of the bimanual setup, shoulders 0.40 m apart.
pub fn default_armada_pair() -> (RobotModel, RobotModel) {
    let mut left = default_armada_model();
    left.name = "armada-left".to_string();
    left.base.xyz[1] = 0.20;
    let mut right = default_armada_model();
    right.name = "armada-right".to_string();
    right.base.xyz[1] = -0.20;
    (left, right)
}

/// Table, bump and manipulated objects.
///
/// World frame: z up, table top at `table_height`, table depth along x and
/// width along y. The bump runs along x at `y = 0`, splitting the table into a
/// right (`y < 0`) and a left (`y > 0`) half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub format_version: u32,
    /// Depth (x), width (y).
    pub table_size: [f64; 2],
    pub table_center: [f64; 2],
    pub table_height: f64,
    pub table_friction: f64,
    pub bump_height: f64,
    pub bump_width: f64,
    pub cube_edge: f64,
    pub cube_mass: f64,
    pub cube_friction: f64,
    pub card_dims: [f64; 3],
    pub card_mass: f64,
    pub card_friction: f64,
    pub gravity: f64,
}

impl Default for SceneModel {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            table_size: [0.40, 0.84],
            table_center: [0.32, 0.0],
            table_height: 0.40,
            table_friction: 0.5,
            bump_height: 0.025,
            bump_width: 0.05,
            cube_edge: 0.090,
            cube_mass: 0.2,
            cube_friction: 0.5,
            card_dims: [0.0856, 0.0540, 0.001],
            card_mass: 0.005,
            card_friction: 0.3,
            gravity: 9.81,
        }
    }
}

impl SceneModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ModelError::invariant("format_version", "unsupported version"));
        }
        let dims = [
            ("table_size", self.table_size[0]),
            ("table_size", self.table_size[1]),
            ("table_height", self.table_height),
            ("bump_height", self.bump_height),
            ("bump_width", self.bump_width),
            ("cube_edge", self.cube_edge),
            ("cube_mass", self.cube_mass),
            ("card_dims", self.card_dims[0]),
            ("card_dims", self.card_dims[1]),
            ("card_dims", self.card_dims[2]),
            ("card_mass", self.card_mass),
            ("gravity", self.gravity),
        ];
        for (field, v) in dims {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::invariant(field, "must be > 0"));
            }
        }
        for (field, mu) in [
            ("table_friction", self.table_friction),
            ("cube_friction", self.cube_friction),
            ("card_friction", self.card_friction),
        ] {
            if !(mu >= 0.0) {
                return Err(ModelError::invariant(field, "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn table_top(&self) -> f64 {
        self.table_height
    }
}

pub fn load_scene(text: &str) -> Result<SceneModel, ModelError> {
    let scene: SceneModel = toml::from_str(text).map_err(|e| ModelError::from_toml(text, e))?;
    scene.validate()?;
    Ok(scene)
}
