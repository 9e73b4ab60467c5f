use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionBounds, EnvError, EpisodeConfig, Observation, ACTION_DIM, OBS_DIM};
use crate::actuation::gravity_torques;
use crate::kinematics::forward_kinematics;
use crate::model::{RobotModel, Vector6};
use crate::retarget::dls;
use crate::rng::{stream, SimRng};

pub trait Policy: Send {
    /// Called with the first observation of every episode.
    fn reset(&mut self, _obs: &Observation) {}
    fn act(&mut self, obs: &Observation) -> Action;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Random,
    /// Holds the initial pose.
    Zero,
    Scripted,
    Linear(LinearPolicy),
}

impl FromStr for PolicyKind {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "zero" => Ok(PolicyKind::Zero),
            "scripted" => Ok(PolicyKind::Scripted),
            _ => Err(EnvError::UnknownPolicy(s.to_string())),
        }
    }
}

pub fn make_policy(kind: &PolicyKind, config: &EpisodeConfig, model: &RobotModel) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(config.bounds, stream(config.seed, 3))),
        PolicyKind::Zero => Box::new(HoldPolicy::new(model.clone(), config.sim.gravity)),
        PolicyKind::Scripted => Box::new(ScriptedPolicy::new(model.clone(), config)),
        PolicyKind::Linear(p) => Box::new(p.clone()),
    }
}

/// Uniform actions over the bounds.
pub struct RandomPolicy {
    bounds: ActionBounds,
    rng: SimRng,
}

impl RandomPolicy {
    pub fn new(bounds: ActionBounds, rng: SimRng) -> Self {
        Self { bounds, rng }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation) -> Action {
        let b = self.bounds;
        let rng = &mut self.rng;
        Action {
            dq: Vector6::from_fn(|_, _| rng.random_range(-b.dq_max..=b.dq_max)),
            kp: Vector6::from_fn(|_, _| rng.random_range(0.0..=b.kp_max)),
            kd: Vector6::from_fn(|_, _| rng.random_range(0.0..=b.kd_max)),
        }
    }
}

fn gravity_residual(model: &RobotModel, q: &Vector6, gravity: f64, kp: f64) -> Vector6 {
    gravity_torques(model, q, 0.0, gravity) / kp
}

/// Servo back to the pose seen at reset, with gravity feed-forward.
pub struct HoldPolicy {
    model: RobotModel,
    gravity: f64,
    hold: Option<Vector6>,
    kp: f64,
    kd: f64,
}

impl HoldPolicy {
    pub fn new(model: RobotModel, gravity: f64) -> Self {
        Self {
            model,
            gravity,
            hold: None,
            kp: 40.0,
            kd: 2.0,
        }
    }
}

impl Policy for HoldPolicy {
    fn reset(&mut self, obs: &Observation) {
        self.hold = Some(obs.q);
    }

    fn act(&mut self, obs: &Observation) -> Action {
        let hold = *self.hold.get_or_insert(obs.q);
        let dq = hold - obs.q + gravity_residual(&self.model, &obs.q, self.gravity, self.kp);
        Action {
            dq: dq.map(|v| v.clamp(-0.2, 0.2)),
            kp: Vector6::repeat(self.kp),
            kd: Vector6::repeat(self.kd),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// Move above the start point at hover height.
    Approach,
    /// Come down to working height.
    Descend,
    /// Cube: push along the goal direction. Card: press and drag.
    Work,
    Hold,
}

/// Hand-written baseline. On card tasks it presses the card against the
/// table and drags it to the goal; on the cube it pushes from behind along
/// the object-to-goal line.
pub struct ScriptedPolicy {
    model: RobotModel,
    gravity: f64,
    card: bool,
    table_top: f64,
    object_height: f64,
    object_half_width: f64,
    ee_radius: f64,
    bounds: ActionBounds,
    phase: Phase,
    kp: f64,
    kd: f64,
    /// Downward force while dragging the card, N.
    pub press_force: f64,
    /// Largest Cartesian step requested per tick, m.
    pub max_step: f64,
    /// Largest step per tick over the last 2 cm of the descent, m.
    pub landing_step: f64,
    /// A drag stroke starts this far behind the card centre and ends this far ahead of it, m.
    pub lead: f64,
    /// Stop once the object centre is this close to the goal, m.
    pub done_radius: f64,
}

impl ScriptedPolicy {
    pub fn new(model: RobotModel, config: &EpisodeConfig) -> Self {
        let dims = config.object_dims();
        Self {
            model,
            gravity: config.sim.gravity,
            card: config.task.uses_card(),
            table_top: config.scene.table_top(),
            object_height: dims[2],
            object_half_width: 0.5 * dims[0].max(dims[1]),
            ee_radius: config.sim.ee_radius,
            bounds: config.bounds,
            phase: Phase::Approach,
            kp: 60.0,
            kd: 3.0,
            press_force: 1.5,
            max_step: 0.02,
            landing_step: 0.004,
            lead: 0.018,
            done_radius: 0.006,
        }
    }

    fn hover_z(&self) -> f64 {
        self.table_top + self.object_height + self.ee_radius + 0.05
    }

    fn work_z(&self) -> f64 {
        if self.card {
            self.table_top + self.object_height + self.ee_radius
        } else {
            self.table_top + 0.035
        }
    }

    /// Start point of the work phase in the table plane.
    fn start_xy(&self, obs: &Observation) -> [f64; 2] {
        let [ox, oy] = obs.object_center();
        let [gx, gy] = obs.goal_center();
        let d = unit2([gx - ox, gy - oy]);
        if self.card {
            return [ox - d[0] * self.lead, oy - d[1] * self.lead];
        }
        let back = self.object_half_width + self.ee_radius + 0.03;
        [ox - d[0] * back, oy - d[1] * back]
    }

    fn action_towards(&self, obs: &Observation, target: Vector3<f64>, press: bool, max_step: f64) -> Action {
        let fk = forward_kinematics(&self.model, &obs.q);
        let p = obs.ee_position();
        let mut dp = target - p;
        let n = dp.norm();
        if n > max_step {
            dp *= max_step / n;
        }
        let j = fk.point_jacobian(5, &fk.ee_position());
        let mut dq = dls(&[(1.0, j, dp)], 1e-3, 1.0);
        dq += gravity_residual(&self.model, &obs.q, self.gravity, self.kp);
        if press {
            dq += j.transpose() * Vector3::new(0.0, 0.0, -self.press_force) / self.kp;
        }
        let m = self.bounds.dq_max;
        Action {
            dq: dq.map(|v| v.clamp(-m, m)),
            kp: Vector6::repeat(self.kp.min(self.bounds.kp_max)),
            kd: Vector6::repeat(self.kd.min(self.bounds.kd_max)),
        }
    }
}

fn unit2(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n < 1e-12 {
        [1.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

impl Policy for ScriptedPolicy {
    fn reset(&mut self, _obs: &Observation) {
        self.phase = Phase::Approach;
    }

    fn act(&mut self, obs: &Observation) -> Action {
        let p = obs.ee_position();
        let [ox, oy] = obs.object_center();
        let [gx, gy] = obs.goal_center();
        let to_goal = [gx - ox, gy - oy];
        let remaining = (to_goal[0].powi(2) + to_goal[1].powi(2)).sqrt();
        if remaining < self.done_radius && self.phase == Phase::Work {
            self.phase = Phase::Hold;
        }
        let [sx, sy] = self.start_xy(obs);
        let planar = ((p.x - sx).powi(2) + (p.y - sy).powi(2)).sqrt();
        match self.phase {
            Phase::Approach => {
                if planar < 0.01 && (p.z - self.hover_z()).abs() < 0.02 {
                    self.phase = Phase::Descend;
                }
            }
            Phase::Descend => {
                if planar > 0.03 {
                    self.phase = Phase::Approach;
                } else if p.z < self.work_z() + 0.004 {
                    self.phase = Phase::Work;
                }
            }
            Phase::Work => {
                let d = unit2(to_goal);
                if self.card && (p.x - ox) * d[0] + (p.y - oy) * d[1] > self.lead {
                    // the card slips behind the hand: lift and start a new stroke
                    self.phase = Phase::Approach;
                } else if !self.card {
                    // drifted off the push line: go round again
                    let lateral = ((p.x - ox) * d[1] - (p.y - oy) * d[0]).abs();
                    if lateral > 0.03 {
                        self.phase = Phase::Approach;
                    }
                }
            }
            Phase::Hold => {}
        }
        match self.phase {
            Phase::Approach => {
                // rise before travelling
                let z = self.hover_z();
                let target = if p.z < z - 0.02 && planar > 0.02 {
                    Vector3::new(p.x, p.y, z)
                } else {
                    Vector3::new(sx, sy, z)
                };
                self.action_towards(obs, target, false, self.max_step)
            }
            Phase::Descend => {
                // land softly: the last 2 cm at a few mm per tick
                let step = if p.z - self.work_z() > 0.02 { self.max_step } else { self.landing_step };
                self.action_towards(obs, Vector3::new(sx, sy, self.work_z()), self.card, step)
            }
            Phase::Work => {
                let d = unit2(to_goal);
                let target = if self.card {
                    Vector3::new(p.x + d[0] * remaining, p.y + d[1] * remaining, self.work_z())
                } else {
                    Vector3::new(ox + d[0] * 0.02, oy + d[1] * 0.02, self.work_z())
                };
                self.action_towards(obs, target, self.card, self.max_step)
            }
            Phase::Hold => {
                let target = Vector3::new(p.x, p.y, self.hover_z());
                self.action_towards(obs, target, false, self.landing_step)
            }
        }
    }
}

/// Affine map from the flattened observation to a normalised action:
/// `u = W o + b`, then `dq = dq_max u`, `kp = kp_max (1 + u)/2`,
/// `kd = kd_max (1 + u)/2`, clamped to the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub bounds: ActionBounds,
}

impl LinearPolicy {
    pub const PARAMS: usize = ACTION_DIM * OBS_DIM + ACTION_DIM;

    pub fn zeros(bounds: ActionBounds) -> Self {
        Self {
            weights: DMatrix::zeros(ACTION_DIM, OBS_DIM),
            bias: DVector::zeros(ACTION_DIM),
            bounds,
        }
    }

    /// Weights row-major, then bias.
    pub fn from_params(params: &[f64], bounds: ActionBounds) -> Self {
        assert_eq!(params.len(), Self::PARAMS);
        let split = ACTION_DIM * OBS_DIM;
        Self {
            weights: DMatrix::from_row_slice(ACTION_DIM, OBS_DIM, &params[..split]),
            bias: DVector::from_column_slice(&params[split..]),
            bounds,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.weights.transpose().iter().copied().collect();
        p.extend(self.bias.iter());
        p
    }
}

impl Policy for LinearPolicy {
    fn act(&mut self, obs: &Observation) -> Action {
        let o = DVector::from_vec(obs.flatten());
        let u = &self.weights * o + &self.bias;
        let b = self.bounds;
        let raw: Vec<f64> = (0..ACTION_DIM)
            .map(|i| match i / 6 {
                0 => b.dq_max * u[i],
                1 => 0.5 * b.kp_max * (1.0 + u[i]),
                _ => 0.5 * b.kd_max * (1.0 + u[i]),
            })
            .collect();
        Action::from_slice(&raw).clamped(&b).0
    }
}
