//! Forward kinematics, Jacobians and the actuator/joint coupling.
//!
//! Frames are composed left to right from the arm base: link frame `i` is
//! `T_{i-1} * origin_i * Rot(axis_i, q_i)`. All Jacobians are expressed in the
//! world frame with the twist ordering (linear; angular).

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::model::{Matrix6, RobotModel, Vector6, JOINTS_PER_ARM};

/// Index of the elbow joint in the chain.
pub const ELBOW: usize = 3;
/// Index of the first wrist joint in the chain.
pub const WRIST: usize = 4;

/// Rigid transform with an explicit orthonormal rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for FramePose {
    fn default() -> Self {
        Self::identity()
    }
}

impl FramePose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Rotation3::identity(), translation)
    }

    /// `self * other`: express `other` (given in this frame) in the parent of `self`.
    pub fn compose(&self, other: &FramePose) -> FramePose {
        FramePose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> FramePose {
        let r_inv = self.rotation.inverse();
        FramePose {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Unit quaternion `[w, x, y, z]` with the sign fixed so that `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let c = q.quaternion().coords; // (x, y, z, w)
        let s = if c[3] < 0.0 { -1.0 } else { 1.0 };
        [s * c[3], s * c[0], s * c[1], s * c[2]]
    }

    /// Max deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m: &Matrix3<f64> = self.rotation.matrix();
        (m.transpose() * m - Matrix3::identity()).abs().max()
    }
}

/// Joint positions and velocities of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vector6,
    pub qdot: Vector6,
}

impl JointState {
    pub fn at_rest(q: Vector6) -> Self {
        Self {
            q,
            qdot: Vector6::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Result of a forward kinematics pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPoses {
    /// World pose of each link frame (the frame of the joint that drives it).
    pub links: [FramePose; JOINTS_PER_ARM],
    /// World pose of the end-effector tool point.
    pub ee: FramePose,
    /// World joint axes.
    pub axes: [Vector3<f64>; JOINTS_PER_ARM],
}

impl ChainPoses {
    pub fn joint_origin(&self, i: usize) -> Vector3<f64> {
        self.links[i].translation
    }

    pub fn ee_position(&self) -> Vector3<f64> {
        self.ee.translation
    }

    /// Positional Jacobian of a world point rigidly attached to link `link`.
    pub fn point_jacobian(&self, link: usize, point: &Vector3<f64>) -> nalgebra::Matrix3x6<f64> {
        let mut j = nalgebra::Matrix3x6::zeros();
        for i in 0..=link.min(JOINTS_PER_ARM - 1) {
            let col = self.axes[i].cross(&(point - self.links[i].translation));
            j.set_column(i, &col);
        }
        j
    }

    /// World-frame geometric Jacobian at the EE origin, rows (linear; angular).
    pub fn geometric_jacobian(&self) -> Matrix6 {
        let p = self.ee.translation;
        let mut j = Matrix6::zeros();
        for i in 0..JOINTS_PER_ARM {
            let lin = self.axes[i].cross(&(p - self.links[i].translation));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&self.axes[i]);
        }
        j
    }
}

pub fn forward_kinematics(model: &RobotModel, q: &Vector6) -> ChainPoses {
    let mut parent = model.base.to_pose();
    let mut links = [FramePose::identity(); JOINTS_PER_ARM];
    let mut axes = [Vector3::zeros(); JOINTS_PER_ARM];
    for (i, link) in model.links.iter().enumerate() {
        let axis = Vector3::from(link.axis);
        let joint_rot = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), q[i]);
        let frame = parent
            .compose(&link.origin.to_pose())
            .compose(&FramePose::new(joint_rot, Vector3::zeros()));
        axes[i] = frame.rotation * axis;
        links[i] = frame;
        parent = frame;
    }
    let ee = parent.compose(&model.ee_offset.to_pose());
    ChainPoses { links, ee, axes }
}

pub fn geometric_jacobian(model: &RobotModel, q: &Vector6) -> Matrix6 {
    forward_kinematics(model, q).geometric_jacobian()
}

/// World positions of the tracked landmarks of one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoints {
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
    pub ee: Vector3<f64>,
}

pub fn keypoints(model: &RobotModel, q: &Vector6) -> Keypoints {
    let fk = forward_kinematics(model, q);
    Keypoints {
        elbow: fk.joint_origin(ELBOW),
        wrist: fk.joint_origin(WRIST),
        ee: fk.ee_position(),
    }
}

/// `q_joint = C q_act`.
pub fn actuator_to_joint(model: &RobotModel, q_act: &Vector6) -> Vector6 {
    model.coupling_matrix() * q_act
}

/// `q_act = C⁻¹ q_joint`.
pub fn joint_to_actuator(model: &RobotModel, q_joint: &Vector6) -> Vector6 {
    model.coupling_inverse() * q_joint
}

/// `τ_act = Cᵀ τ_joint`; with `q_joint = C q_act` this keeps `q̇ᵀτ` identical on both sides.
pub fn joint_torque_to_actuator(model: &RobotModel, tau_joint: &Vector6) -> Vector6 {
    model.coupling_matrix().transpose() * tau_joint
}

/// `τ_joint = C⁻ᵀ τ_act`.
pub fn actuator_torque_to_joint(model: &RobotModel, tau_act: &Vector6) -> Vector6 {
    model.coupling_inverse().transpose() * tau_act
}
