//! Domain randomisation of the simulated scene.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{RobotModel, Vector6};
use crate::rng::SimRng;
use crate::sim::WorldState;

/// Ranges of the randomised quantities. Uniform ranges are `[min, max]`;
/// Gaussian terms are zero-mean with the given standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrConfig {
    pub enabled: bool,
    /// Additive, m.
    pub table_height_offset: [f64; 2],
    /// Multiplicative.
    pub object_friction_scale: [f64; 2],
    /// Multiplicative.
    pub object_mass_scale: [f64; 2],
    /// Additive on initial joint positions, rad.
    pub joint_position_std: f64,
    /// Additive on initial joint velocities, rad/s.
    pub joint_velocity_std: f64,
    /// Additive on the observed EE position, m.
    pub ee_position_std: f64,
    /// Additive joint torque noise per physics step, N·m.
    pub torque_std: f64,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            table_height_offset: [-0.01, 0.01],
            object_friction_scale: [0.7, 1.3],
            object_mass_scale: [0.7, 1.3],
            joint_position_std: 0.05,
            joint_velocity_std: 0.05,
            ee_position_std: 0.05,
            torque_std: 0.1,
        }
    }
}

impl DrConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, [lo, hi]) in [
            ("table_height_offset", self.table_height_offset),
            ("object_friction_scale", self.object_friction_scale),
            ("object_mass_scale", self.object_mass_scale),
        ] {
            if !(lo <= hi) {
                return Err(format!("{name}: min must not exceed max"));
            }
        }
        if self.object_friction_scale[0] < 0.0 || self.object_mass_scale[0] <= 0.0 {
            return Err("scale factors must be positive".into());
        }
        for (name, s) in [
            ("joint_position_std", self.joint_position_std),
            ("joint_velocity_std", self.joint_velocity_std),
            ("ee_position_std", self.ee_position_std),
            ("torque_std", self.torque_std),
        ] {
            if !(s >= 0.0) {
                return Err(format!("{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// The draw applied to one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrSample {
    pub table_height_offset: f64,
    pub friction_scale: f64,
    pub mass_scale: f64,
    pub joint_position_noise: Vector6,
    pub joint_velocity_noise: Vector6,
    /// Observation noise std for the EE position, applied by the environment.
    pub ee_position_std: f64,
    /// Torque noise std, applied by the simulator each physics step.
    pub torque_std: f64,
}

impl DrSample {
    pub fn identity() -> Self {
        Self {
            table_height_offset: 0.0,
            friction_scale: 1.0,
            mass_scale: 1.0,
            joint_position_noise: Vector6::zeros(),
            joint_velocity_noise: Vector6::zeros(),
            ee_position_std: 0.0,
            torque_std: 0.0,
        }
    }
}

fn uniform(rng: &mut SimRng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn gaussian6(rng: &mut SimRng, std: f64) -> Vector6 {
    if std == 0.0 {
        return Vector6::zeros();
    }
    let n = Normal::new(0.0, std).expect("finite std");
    Vector6::from_fn(|_, _| n.sample(rng))
}

/// Draws one randomisation and applies it: the table, bump and objects shift
/// by the height offset, objects get scaled friction and mass (inertia scales
/// with mass), and the arm state is perturbed and clamped to its limits.
/// Disabled configs return the world unchanged and draw nothing.
pub fn randomize(
    world: &WorldState,
    model: &RobotModel,
    dr: &DrConfig,
    rng: &mut SimRng,
) -> (WorldState, DrSample) {
    if !dr.enabled {
        return (world.clone(), DrSample::identity());
    }
    let sample = DrSample {
        table_height_offset: uniform(rng, dr.table_height_offset),
        friction_scale: uniform(rng, dr.object_friction_scale),
        mass_scale: uniform(rng, dr.object_mass_scale),
        joint_position_noise: gaussian6(rng, dr.joint_position_std),
        joint_velocity_noise: gaussian6(rng, dr.joint_velocity_std),
        ee_position_std: dr.ee_position_std,
        torque_std: dr.torque_std,
    };
    let mut out = world.clone();
    let lift = Vector3::new(0.0, 0.0, sample.table_height_offset);
    for o in out.obstacles.iter_mut() {
        o.center += lift;
    }
    for b in out.bodies.iter_mut() {
        b.position += lift;
        b.friction *= sample.friction_scale;
        b.mass *= sample.mass_scale;
        b.inertia *= sample.mass_scale;
    }
    out.arm.q = model.clamp_to_limits(&(out.arm.q + sample.joint_position_noise));
    out.arm.qdot += sample.joint_velocity_noise;
    (out, sample)
}
