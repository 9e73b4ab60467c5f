//! Rigid-body dynamics of the serial arm.
//!
//! Inverse dynamics is recursive Newton-Euler in world coordinates. The joint
//! space mass matrix is assembled with the composite-rigid-body algorithm and
//! includes the reflected rotor inertia of each actuator mapped through the
//! coupling matrix.

use nalgebra::{Matrix3, Vector3};

use crate::kinematics::{forward_kinematics, ChainPoses};
use crate::model::{Matrix6, RobotModel, Vector6, JOINTS_PER_ARM};
use crate::sim::SimError;

/// Force and moment applied by the environment on the arm at the EE origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }
}

/// A world-frame force applied on the arm at a world point fixed to `link`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointForce {
    pub link: usize,
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct BodyInertia {
    mass: f64,
    com: Vector3<f64>,
    inertia: Matrix3<f64>,
}

fn point_mass_inertia(mass: f64, d: &Vector3<f64>) -> Matrix3<f64> {
    mass * (Matrix3::identity() * d.norm_squared() - d * d.transpose())
}

/// Per-call dynamics context: link inertias with the lumped tool mass, the
/// armature matrix and gravity.
pub struct ArmDynamics<'a> {
    model: &'a RobotModel,
    bodies: [BodyInertia; JOINTS_PER_ARM],
    armature: Matrix6,
    gravity: f64,
}

impl<'a> ArmDynamics<'a> {
    pub fn new(model: &'a RobotModel, payload_mass: f64, gravity: f64) -> Self {
        let mut bodies = [BodyInertia {
            mass: 0.0,
            com: Vector3::zeros(),
            inertia: Matrix3::zeros(),
        }; JOINTS_PER_ARM];
        for (b, link) in bodies.iter_mut().zip(&model.links) {
            *b = BodyInertia {
                mass: link.mass,
                com: Vector3::from(link.com),
                inertia: link.inertia_matrix(),
            };
        }
        let tool = model.gripper_mass + payload_mass;
        if tool > 0.0 {
            let last = &mut bodies[JOINTS_PER_ARM - 1];
            let tip = Vector3::from(model.ee_offset.xyz);
            let m = last.mass + tool;
            let com = (last.com * last.mass + tip * tool) / m;
            let inertia = last.inertia
                + point_mass_inertia(last.mass, &(last.com - com))
                + point_mass_inertia(tool, &(tip - com));
            *last = BodyInertia { mass: m, com, inertia };
        }
        let c_inv = model.coupling_inverse();
        let rotor = Matrix6::from_diagonal(&Vector6::from_fn(|i, _| {
            model.actuators[i].reflected_inertia()
        }));
        let armature = c_inv.transpose() * rotor * c_inv;
        Self {
            model,
            bodies,
            armature,
            gravity,
        }
    }

    pub fn model(&self) -> &RobotModel {
        self.model
    }

    fn world_com(&self, fk: &ChainPoses, i: usize) -> Vector3<f64> {
        fk.links[i].transform_point(&self.bodies[i].com)
    }

    fn world_inertia(&self, fk: &ChainPoses, i: usize) -> Matrix3<f64> {
        let r = fk.links[i].rotation.matrix();
        r * self.bodies[i].inertia * r.transpose()
    }

    /// Recursive Newton-Euler. `with_gravity = false` drops the gravity term.
    pub fn rnea(
        &self,
        fk: &ChainPoses,
        qdot: &Vector6,
        qddot: &Vector6,
        with_gravity: bool,
        external: &Wrench,
    ) -> Vector6 {
        let n = JOINTS_PER_ARM;
        let mut omega = Vector3::zeros();
        let mut alpha = Vector3::zeros();
        let mut acc = if with_gravity {
            Vector3::new(0.0, 0.0, self.gravity)
        } else {
            Vector3::zeros()
        };
        let mut prev_origin = self.model.base.to_pose().translation;

        let mut forces = [Vector3::zeros(); JOINTS_PER_ARM];
        let mut moments = [Vector3::zeros(); JOINTS_PER_ARM];
        let mut coms = [Vector3::zeros(); JOINTS_PER_ARM];
        for i in 0..n {
            let p = fk.links[i].translation;
            let r = p - prev_origin;
            acc += alpha.cross(&r) + omega.cross(&omega.cross(&r));
            let z = fk.axes[i];
            let spin = z * qdot[i];
            alpha += z * qddot[i] + omega.cross(&spin);
            omega += spin;
            let c = self.world_com(fk, i);
            let d = c - p;
            let acc_c = acc + alpha.cross(&d) + omega.cross(&omega.cross(&d));
            let inertia = self.world_inertia(fk, i);
            forces[i] = self.bodies[i].mass * acc_c;
            moments[i] = inertia * alpha + omega.cross(&(inertia * omega));
            coms[i] = c;
            prev_origin = p;
        }

        let mut tau = Vector6::zeros();
        let mut f_next = -external.force;
        let mut n_next = -external.torque;
        let mut p_next = fk.ee.translation;
        for i in (0..n).rev() {
            let p = fk.links[i].translation;
            let f = forces[i] + f_next;
            let m = moments[i] + (coms[i] - p).cross(&forces[i]) + n_next + (p_next - p).cross(&f_next);
            tau[i] = fk.axes[i].dot(&m);
            f_next = f;
            n_next = m;
            p_next = p;
        }
        tau + self.armature * qddot
    }

    /// Composite-rigid-body mass matrix.
    pub fn mass_matrix(&self, fk: &ChainPoses) -> Matrix6 {
        let n = JOINTS_PER_ARM;
        let mut m = Matrix6::zeros();
        let coms: Vec<_> = (0..n).map(|i| self.world_com(fk, i)).collect();
        let inertias: Vec<_> = (0..n).map(|i| self.world_inertia(fk, i)).collect();
        for j in 0..n {
            let mass: f64 = (j..n).map(|k| self.bodies[k].mass).sum();
            if mass <= 0.0 {
                continue;
            }
            let com = (j..n).map(|k| coms[k] * self.bodies[k].mass).sum::<Vector3<f64>>() / mass;
            let inertia = (j..n)
                .map(|k| inertias[k] + point_mass_inertia(self.bodies[k].mass, &(coms[k] - com)))
                .sum::<Matrix3<f64>>();
            let z = fk.axes[j];
            let pj = fk.links[j].translation;
            let force = mass * z.cross(&(com - pj));
            let moment_com = inertia * z;
            for i in 0..=j {
                let pi = fk.links[i].translation;
                let v = fk.axes[i].dot(&(moment_com + (com - pi).cross(&force)));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m + self.armature
    }

    /// Coriolis, centrifugal, gravity and external-wrench terms.
    pub fn bias(&self, fk: &ChainPoses, qdot: &Vector6, external: &Wrench) -> Vector6 {
        self.rnea(fk, qdot, &Vector6::zeros(), true, external)
    }

    /// Solves `M q̈ = τ − bias + Σ J_pᵀ f`.
    pub fn forward(
        &self,
        fk: &ChainPoses,
        qdot: &Vector6,
        tau: &Vector6,
        contacts: &[PointForce],
    ) -> Result<Vector6, SimError> {
        let mut rhs = tau - self.bias(fk, qdot, &Wrench::zero());
        for c in contacts {
            rhs += fk.point_jacobian(c.link, &c.point).transpose() * c.force;
        }
        let chol = CholeskyFactor::new(&self.mass_matrix(fk)).map_err(|joint| {
            SimError::SingularMassMatrix {
                joint: self.model.joints[joint].name.clone(),
            }
        })?;
        Ok(chol.solve(&rhs))
    }

    /// Kinetic plus potential energy (potential zero at z = 0).
    pub fn energy(&self, fk: &ChainPoses, qdot: &Vector6) -> f64 {
        let kinetic = 0.5 * qdot.dot(&(self.mass_matrix(fk) * qdot));
        let potential: f64 = (0..JOINTS_PER_ARM)
            .map(|i| self.bodies[i].mass * self.gravity * self.world_com(fk, i).z)
            .sum();
        kinetic + potential
    }
}

/// Lower-triangular Cholesky factor of a 6x6 SPD matrix. Reports the first
/// joint whose pivot is not positive.
pub struct CholeskyFactor {
    l: Matrix6,
}

impl CholeskyFactor {
    pub fn new(a: &Matrix6) -> Result<Self, usize> {
        let n = JOINTS_PER_ARM;
        let mut l = Matrix6::zeros();
        let scale = a.diagonal().abs().max().max(f64::MIN_POSITIVE);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 1e-14 * scale) {
                return Err(j);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &Vector6) -> Vector6 {
        let n = JOINTS_PER_ARM;
        let l = &self.l;
        let mut y = *b;
        for i in 0..n {
            for k in 0..i {
                y[i] -= l[(i, k)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= l[(k, i)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        y
    }
}

/// Joint torques realising `q̈` from state `(q, q̇)` under gravity and an
/// external EE wrench, with `payload_mass` lumped at the tool point.
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &Vector6,
    qdot: &Vector6,
    qddot: &Vector6,
    external: &Wrench,
    payload_mass: f64,
    gravity: f64,
) -> Vector6 {
    let fk = forward_kinematics(model, q);
    ArmDynamics::new(model, payload_mass, gravity).rnea(&fk, qdot, qddot, true, external)
}

pub fn mass_matrix(model: &RobotModel, q: &Vector6, payload_mass: f64) -> Matrix6 {
    let fk = forward_kinematics(model, q);
    ArmDynamics::new(model, payload_mass, 0.0).mass_matrix(&fk)
}

pub fn forward_dynamics(
    model: &RobotModel,
    q: &Vector6,
    qdot: &Vector6,
    tau: &Vector6,
    contacts: &[PointForce],
    gravity: f64,
) -> Result<Vector6, SimError> {
    let fk = forward_kinematics(model, q);
    ArmDynamics::new(model, 0.0, gravity).forward(&fk, qdot, tau, contacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_armada_model, Link, Placement};
    use rand::{Rng, SeedableRng};

    fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector6 {
        Vector6::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    /// Arm whose only massive link is a point mass at `l_com` on link 2 (shoulder pitch).
    fn pendulum(mass: f64, l_com: f64) -> RobotModel {
        let mut model = default_armada_model();
        for link in model.links.iter_mut() {
            link.mass = 0.0;
            link.inertia = [[0.0; 3]; 3];
        }
        model.links[2] = Link {
            mass,
            com: [l_com, 0.0, 0.0],
            ..model.links[2].clone()
        };
        model.gripper_mass = 0.0;
        for a in model.actuators.iter_mut() {
            a.rotor_inertia = 0.0;
        }
        model.base = Placement::default();
        model
    }

    #[test]
    fn no_loads_no_torque() {
        let model = default_armada_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = random_vec(&mut rng, 2.0);
        let tau = inverse_dynamics(&model, &q, &Vector6::zeros(), &Vector6::zeros(), &Wrench::zero(), 0.0, 0.0);
        assert!(tau.abs().max() < 1e-15);
    }

    #[test]
    fn pendulum_gravity_torque_closed_form() {
        let (m, l, g) = (0.7, 0.23, 9.81);
        let model = pendulum(m, l);
        for k in 0..25 {
            let theta = -3.0 + 0.25 * k as f64;
            let mut q = Vector6::zeros();
            q[2] = theta;
            let tau = inverse_dynamics(&model, &q, &Vector6::zeros(), &Vector6::zeros(), &Wrench::zero(), 0.0, g);
            // pitch about +y, measured from horizontal: holding torque is -m g l cos θ;
            // with θ measured from the hanging pose (θ = φ + π/2) this is m g l sin φ.
            let phi = theta - std::f64::consts::FRAC_PI_2;
            assert!((tau[2] - m * g * l * phi.sin()).abs() < 1e-9, "{} vs {}", tau[2], m * g * l * phi.sin());
        }
    }

    #[test]
    fn rnea_matches_mass_matrix_plus_bias() {
        let model = default_armada_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = random_vec(&mut rng, 2.5);
            let qd = random_vec(&mut rng, 3.0);
            let qdd = random_vec(&mut rng, 10.0);
            let fk = forward_kinematics(&model, &q);
            let dynamics = ArmDynamics::new(&model, 0.0, 9.81);
            // Oracle: assemble M column by column through RNEA with unit accelerations.
            let mut m_oracle = Matrix6::zeros();
            for j in 0..6 {
                let mut e = Vector6::zeros();
                e[j] = 1.0;
                m_oracle.set_column(j, &dynamics.rnea(&fk, &Vector6::zeros(), &e, false, &Wrench::zero()));
            }
            let bias = dynamics.bias(&fk, &qd, &Wrench::zero());
            let tau = dynamics.rnea(&fk, &qd, &qdd, true, &Wrench::zero());
            assert!((tau - (m_oracle * qdd + bias)).abs().max() < 1e-8);
            assert!((dynamics.mass_matrix(&fk) - m_oracle).abs().max() < 1e-10);
        }
    }

    #[test]
    fn forward_inverts_inverse() {
        let model = default_armada_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = random_vec(&mut rng, 2.5);
            let qd = random_vec(&mut rng, 3.0);
            let qdd = random_vec(&mut rng, 10.0);
            let tau = inverse_dynamics(&model, &q, &qd, &qdd, &Wrench::zero(), 0.0, 9.81);
            let back = forward_dynamics(&model, &q, &qd, &tau, &[], 9.81).unwrap();
            assert!((back - qdd).abs().max() < 1e-8);
            let bias = inverse_dynamics(&model, &q, &qd, &Vector6::zeros(), &Wrench::zero(), 0.0, 9.81);
            let rest = forward_dynamics(&model, &q, &qd, &bias, &[], 9.81).unwrap();
            assert!(rest.abs().max() < 1e-9);
        }
    }

    #[test]
    fn external_wrench_matches_jacobian_transpose() {
        let model = default_armada_model();
        let q = Vector6::new(0.2, -0.3, 0.5, -1.0, 0.4, 0.1);
        let w = Wrench {
            force: Vector3::new(1.0, -2.0, 0.5),
            torque: Vector3::new(0.1, 0.2, -0.3),
        };
        let zero = Vector6::zeros();
        let with = inverse_dynamics(&model, &q, &zero, &zero, &w, 0.0, 9.81);
        let without = inverse_dynamics(&model, &q, &zero, &zero, &Wrench::zero(), 0.0, 9.81);
        let j = crate::kinematics::geometric_jacobian(&model, &q);
        let mut wv = Vector6::zeros();
        wv.fixed_rows_mut::<3>(0).copy_from(&w.force);
        wv.fixed_rows_mut::<3>(3).copy_from(&w.torque);
        assert!((with - (without - j.transpose() * wv)).abs().max() < 1e-12);
    }

    #[test]
    fn singular_mass_matrix_names_joint() {
        let mut model = pendulum(1.0, 0.2);
        model.links[2].mass = 0.0;
        let err = forward_dynamics(&model, &Vector6::zeros(), &Vector6::zeros(), &Vector6::zeros(), &[], 9.81)
            .unwrap_err();
        assert_eq!(err, SimError::SingularMassMatrix { joint: "shoulder_yaw".into() });
    }
}
