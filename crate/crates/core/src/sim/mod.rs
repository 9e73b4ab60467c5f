//! Arm plus free-body simulation with penalty contacts.
//!
//! One [`step`] advances the world by `SimConfig::dt` (1/200 s). Internally the
//! step is split into `integration_substeps` semi-implicit Euler updates
//! (velocities first, then positions) so that penalty contacts stay stable for
//! light objects. PD commands are re-evaluated on every integration substep
//! with the target and gains held for the whole step.

pub mod contact;
pub mod dynamics;
pub mod randomize;

use std::io::Write;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{pd_torque, PdGains};
use crate::kinematics::{forward_kinematics, FramePose, JointState};
use crate::model::{RobotModel, Vector6, JOINTS_PER_ARM};
use crate::rng::SimRng;
use contact::{
    body_effective_mass, obb_vs_aabb, pose_of, sphere_vs_aabb, sphere_vs_obb, sphere_vs_sphere,
    Contact, Obstacle, PenaltyLaw, Shape,
};
use dynamics::{ArmDynamics, CholeskyFactor, PointForce};

pub use randomize::{randomize, DrConfig, DrSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("mass matrix is singular at joint `{joint}`")]
    SingularMassMatrix { joint: String },
    #[error("non-finite state at t = {time:.4} s: {detail}")]
    NonFinite { time: f64, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Control/physics step, s.
    pub dt: f64,
    /// Physics steps per policy tick.
    pub control_substeps: usize,
    /// Semi-implicit Euler updates per physics step.
    pub integration_substeps: usize,
    /// Penalty stiffness k_n, N/m.
    pub contact_stiffness: f64,
    /// Fraction of critical damping for the penalty damper c_n.
    pub contact_damping_ratio: f64,
    /// Friction regularisation velocity, m/s.
    pub friction_reg_velocity: f64,
    pub gravity: f64,
    pub contacts_enabled: bool,
    /// Radius of the EE collision sphere, m.
    pub ee_radius: f64,
    pub ee_friction: f64,
    /// Std of additive joint torque noise drawn once per physics step, N·m.
    pub torque_noise_std: f64,
    /// Upper bound on `ω h` of any single penalty spring.
    pub stiffness_stability: f64,
    /// Upper bound on `c_n h / m` of any single penalty damper.
    pub damping_stability: f64,
    /// Upper bound on `c_t h / m` of the viscous friction branch.
    pub friction_stability: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 200.0,
            control_substeps: 10,
            integration_substeps: 20,
            contact_stiffness: 2.0e4,
            contact_damping_ratio: 1.0,
            friction_reg_velocity: 0.01,
            gravity: 9.81,
            contacts_enabled: true,
            ee_radius: 0.02,
            ee_friction: 1.0,
            torque_noise_std: 0.0,
            stiffness_stability: 0.5,
            damping_stability: 0.25,
            friction_stability: 0.25,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be > 0".into());
        }
        if self.control_substeps < 1 || self.integration_substeps < 1 {
            return Err("substeps must be >= 1".into());
        }
        Ok(())
    }

    pub fn substep(&self) -> f64 {
        self.dt / self.integration_substeps as f64
    }

    fn penalty(&self, friction: f64) -> PenaltyLaw {
        PenaltyLaw {
            stiffness: self.contact_stiffness,
            damping_ratio: self.contact_damping_ratio,
            friction,
            reg_velocity: self.friction_reg_velocity,
            step: self.substep(),
            stiffness_stability: self.stiffness_stability,
            damping_stability: self.damping_stability,
            friction_stability: self.friction_stability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub name: String,
    pub shape: Shape,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    pub mass: f64,
    /// Body-frame inertia about the COM.
    pub inertia: Matrix3<f64>,
    pub friction: f64,
    pub restitution: f64,
}

impl RigidBodyState {
    pub fn cuboid(name: &str, dims: [f64; 3], mass: f64, friction: f64, position: Vector3<f64>) -> Self {
        let [a, b, c] = dims;
        let inertia = Matrix3::from_diagonal(&Vector3::new(
            mass * (b * b + c * c) / 12.0,
            mass * (a * a + c * c) / 12.0,
            mass * (a * a + b * b) / 12.0,
        ));
        Self {
            name: name.to_string(),
            shape: Shape::Cuboid {
                half: [a / 2.0, b / 2.0, c / 2.0],
            },
            position,
            orientation: UnitQuaternion::identity(),
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            mass,
            inertia,
            friction,
            restitution: 0.0,
        }
    }

    pub fn sphere(name: &str, radius: f64, mass: f64, friction: f64, position: Vector3<f64>) -> Self {
        let i = 0.4 * mass * radius * radius;
        Self {
            name: name.to_string(),
            shape: Shape::Sphere { radius },
            position,
            orientation: UnitQuaternion::identity(),
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            mass,
            inertia: Matrix3::from_diagonal_element(i),
            friction,
            restitution: 0.0,
        }
    }

    pub fn pose(&self) -> FramePose {
        pose_of(&self.position, &self.orientation)
    }

    pub fn half_extents(&self) -> Option<Vector3<f64>> {
        match self.shape {
            Shape::Cuboid { half } => Some(Vector3::from(half)),
            Shape::Sphere { .. } => None,
        }
    }

    fn world_inertia_inv(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix();
        let inv = self.inertia.try_inverse().unwrap_or_else(Matrix3::zeros);
        r.matrix() * inv * r.matrix().transpose()
    }

    pub fn point_velocity(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear_velocity + self.angular_velocity.cross(&(p - self.position))
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub arm: JointState,
    pub bodies: Vec<RigidBodyState>,
    pub obstacles: Vec<Obstacle>,
    pub time: f64,
}

impl WorldState {
    pub fn arm_only(q: Vector6) -> Self {
        Self {
            arm: JointState::at_rest(q),
            bodies: Vec::new(),
            obstacles: Vec::new(),
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointCommand {
    Torque(Vector6),
    /// Joint PD servo toward `target` with the given gains.
    Pd { target: Vector6, gains: PdGains },
}

/// External force on a free body at a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyLoad {
    pub body: usize,
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactPair {
    BodyObstacle { body: usize, obstacle: usize },
    EeBody { body: usize },
    EeObstacle { obstacle: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactRecord {
    pub pair: ContactPair,
    pub normal_force: f64,
    pub tangential_force: f64,
    pub friction: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Every contact of every integration substep.
    pub contacts: Vec<ContactRecord>,
    /// Joint torque actually applied by the actuators on the last substep.
    pub applied_torque: Vector6,
}

pub fn step(
    world: &mut WorldState,
    model: &RobotModel,
    command: &JointCommand,
    config: &SimConfig,
    rng: &mut SimRng,
) -> Result<StepReport, SimError> {
    step_with_loads(world, model, command, &[], config, rng)
}

pub fn step_with_loads(
    world: &mut WorldState,
    model: &RobotModel,
    command: &JointCommand,
    loads: &[BodyLoad],
    config: &SimConfig,
    rng: &mut SimRng,
) -> Result<StepReport, SimError> {
    let noise = if config.torque_noise_std > 0.0 {
        let normal = Normal::new(0.0, config.torque_noise_std).expect("valid std");
        Vector6::from_fn(|_, _| normal.sample(rng))
    } else {
        Vector6::zeros()
    };
    let h = config.substep();
    let dynamics = ArmDynamics::new(model, 0.0, config.gravity);
    let limits = model.torque_limits();
    let mut report = StepReport::default();
    for _ in 0..config.integration_substeps {
        let fk = forward_kinematics(model, &world.arm.q);
        let mass = dynamics.mass_matrix(&fk);
        let chol = CholeskyFactor::new(&mass).map_err(|j| SimError::SingularMassMatrix {
            joint: model.joints[j].name.clone(),
        })?;

        let n_bodies = world.bodies.len();
        let mut body_force = vec![Vector3::zeros(); n_bodies];
        let mut body_torque = vec![Vector3::zeros(); n_bodies];
        let mut arm_forces: Vec<PointForce> = Vec::new();

        for load in loads {
            let b = &world.bodies[load.body];
            body_force[load.body] += load.force;
            body_torque[load.body] += (load.point - b.position).cross(&load.force);
        }

        if config.contacts_enabled {
            let ee_center = fk.ee_position();
            let last = JOINTS_PER_ARM - 1;
            let ee_jac = |p: &Vector3<f64>| fk.point_jacobian(last, p);
            let arm_mass_along = |p: &Vector3<f64>, n: &Vector3<f64>| {
                let w = ee_jac(p).transpose() * n;
                let s = w.dot(&chol.solve(&w));
                if s > 0.0 {
                    1.0 / s
                } else {
                    f64::INFINITY
                }
            };

            for (bi, body) in world.bodies.iter().enumerate() {
                let inv_inertia = body.world_inertia_inv();
                let pose = body.pose();
                for (oi, obstacle) in world.obstacles.iter().enumerate() {
                    let contacts: Vec<Contact> = match body.shape {
                        Shape::Cuboid { half } => obb_vs_aabb(&pose, &Vector3::from(half), obstacle),
                        Shape::Sphere { radius } => {
                            sphere_vs_aabb(&body.position, radius, obstacle).into_iter().collect()
                        }
                    };
                    let law = config.penalty((body.friction * obstacle.friction).sqrt());
                    for c in contacts {
                        let r = c.point - body.position;
                        let m_eff = body_effective_mass(body.mass, &inv_inertia, &r, &c.normal);
                        let f = law.force(&c, &body.point_velocity(&c.point), m_eff);
                        body_force[bi] += f.force;
                        body_torque[bi] += r.cross(&f.force);
                        report.contacts.push(ContactRecord {
                            pair: ContactPair::BodyObstacle { body: bi, obstacle: oi },
                            normal_force: f.normal,
                            tangential_force: f.tangential,
                            friction: law.friction,
                            depth: c.depth,
                        });
                    }
                }

                // EE sphere is the pushed shape; the body receives the reaction.
                let ee_contact = match body.shape {
                    Shape::Cuboid { half } => sphere_vs_obb(&ee_center, config.ee_radius, &pose, &Vector3::from(half)),
                    Shape::Sphere { radius } => sphere_vs_sphere(&ee_center, config.ee_radius, &body.position, radius),
                };
                if let Some(c) = ee_contact {
                    let law = config.penalty((body.friction * config.ee_friction).sqrt());
                    let r = c.point - body.position;
                    let m_body = body_effective_mass(body.mass, &inv_inertia, &r, &c.normal);
                    let m_arm = arm_mass_along(&c.point, &c.normal);
                    let m_eff = 1.0 / (1.0 / m_body + 1.0 / m_arm);
                    let v_ee = ee_jac(&c.point) * world.arm.qdot;
                    let v_rel = v_ee - body.point_velocity(&c.point);
                    let f = law.force(&c, &v_rel, m_eff);
                    arm_forces.push(PointForce {
                        link: last,
                        point: c.point,
                        force: f.force,
                    });
                    body_force[bi] -= f.force;
                    body_torque[bi] -= r.cross(&f.force);
                    report.contacts.push(ContactRecord {
                        pair: ContactPair::EeBody { body: bi },
                        normal_force: f.normal,
                        tangential_force: f.tangential,
                        friction: law.friction,
                        depth: c.depth,
                    });
                }
            }

            for (oi, obstacle) in world.obstacles.iter().enumerate() {
                if let Some(c) = sphere_vs_aabb(&ee_center, config.ee_radius, obstacle) {
                    let law = config.penalty((obstacle.friction * config.ee_friction).sqrt());
                    let m_eff = arm_mass_along(&c.point, &c.normal);
                    let v_rel = ee_jac(&c.point) * world.arm.qdot;
                    let f = law.force(&c, &v_rel, m_eff);
                    arm_forces.push(PointForce {
                        link: last,
                        point: c.point,
                        force: f.force,
                    });
                    report.contacts.push(ContactRecord {
                        pair: ContactPair::EeObstacle { obstacle: oi },
                        normal_force: f.normal,
                        tangential_force: f.tangential,
                        friction: law.friction,
                        depth: c.depth,
                    });
                }
            }
        }

        // Arm: velocity then position.
        let actuator = match command {
            JointCommand::Torque(tau) => Vector6::from_fn(|j, _| tau[j].clamp(-limits[j], limits[j])),
            JointCommand::Pd { target, gains } => {
                pd_torque(gains, target, &world.arm.q, &world.arm.qdot, &limits)
            }
        };
        report.applied_torque = actuator;
        let mut rhs = actuator + noise - dynamics.bias(&fk, &world.arm.qdot, &dynamics::Wrench::zero());
        for c in &arm_forces {
            rhs += fk.point_jacobian(c.link, &c.point).transpose() * c.force;
        }
        let qddot = chol.solve(&rhs);
        let arm = &mut world.arm;
        arm.qdot += qddot * h;
        arm.q += arm.qdot * h;
        for (j, spec) in model.joints.iter().enumerate() {
            if arm.q[j] < spec.lower {
                arm.q[j] = spec.lower;
                arm.qdot[j] = arm.qdot[j].max(0.0);
            } else if arm.q[j] > spec.upper {
                arm.q[j] = spec.upper;
                arm.qdot[j] = arm.qdot[j].min(0.0);
            }
        }

        let gravity = Vector3::new(0.0, 0.0, -config.gravity);
        for (bi, body) in world.bodies.iter_mut().enumerate() {
            let r = body.orientation.to_rotation_matrix();
            let inertia_world = r.matrix() * body.inertia * r.matrix().transpose();
            let inv = body.world_inertia_inv();
            body.linear_velocity += (body_force[bi] / body.mass + gravity) * h;
            let gyro = body.angular_velocity.cross(&(inertia_world * body.angular_velocity));
            body.angular_velocity += inv * (body_torque[bi] - gyro) * h;
            body.position += body.linear_velocity * h;
            body.orientation =
                UnitQuaternion::from_scaled_axis(body.angular_velocity * h) * body.orientation;
            body.orientation.renormalize();
        }

        world.time += h;
        if !world.arm.is_finite() {
            return Err(SimError::NonFinite {
                time: world.time,
                detail: format!("arm state q={:?}", world.arm.q.as_slice()),
            });
        }
        if let Some(b) = world.bodies.iter().find(|b| !b.is_finite()) {
            return Err(SimError::NonFinite {
                time: world.time,
                detail: format!("body `{}`", b.name),
            });
        }
    }
    Ok(report)
}

/// Total arm energy (kinetic + gravitational), J.
pub fn arm_energy(model: &RobotModel, state: &JointState, gravity: f64) -> f64 {
    let fk = forward_kinematics(model, &state.q);
    ArmDynamics::new(model, 0.0, gravity).energy(&fk, &state.qdot)
}

/// Per-step CSV dump: `t,q1..q6,qd1..qd6,obj_x,obj_y,obj_z,obj_qw,obj_qx,obj_qy,obj_qz`.
/// Object columns describe the first free body, or are empty when there is none.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=6).map(|i| format!("q{i}")));
        header.extend((1..=6).map(|i| format!("qd{i}")));
        header.extend(
            ["obj_x", "obj_y", "obj_z", "obj_qw", "obj_qx", "obj_qy", "obj_qz"].map(String::from),
        );
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    pub fn record(&mut self, world: &WorldState) -> std::io::Result<()> {
        let mut fields: Vec<String> = vec![format!("{:.6}", world.time)];
        fields.extend(world.arm.q.iter().map(|v| format!("{v:.9}")));
        fields.extend(world.arm.qdot.iter().map(|v| format!("{v:.9}")));
        match world.bodies.first() {
            Some(b) => {
                fields.extend(b.position.iter().map(|v| format!("{v:.9}")));
                let wxyz = b.pose().quaternion_wxyz();
                fields.extend(wxyz.iter().map(|v| format!("{v:.9}")));
            }
            None => fields.extend(std::iter::repeat_n(String::new(), 7)),
        }
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
