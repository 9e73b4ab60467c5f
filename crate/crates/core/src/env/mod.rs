//! Non-prehensile bump and card tasks.
//!
//! The policy runs at 20 Hz: every [`Env::step`] holds one PD target
//! `q + dq` with the action's gains for `control_substeps` physics steps.

mod cem;
mod policy;
mod rollout;

use std::fmt;
use std::str::FromStr;

use nalgebra::{SMatrix, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::PdGains;
use crate::kinematics::{forward_kinematics, keypoints, FramePose};
use crate::model::{default_armada_model, RobotModel, SceneModel, Vector6};
use crate::retarget::dls;
use crate::rng::{stream, SimRng};
use crate::sim::contact::{box_corners, sphere_vs_obb, Obstacle};
use crate::sim::{self, randomize, DrConfig, DrSample, JointCommand, RigidBodyState, SimConfig, SimError, WorldState};

pub use cem::{train_cem, CemConfig, CemResult};
pub use policy::{make_policy, HoldPolicy, LinearPolicy, Policy, PolicyKind, RandomPolicy, ScriptedPolicy};
pub use rollout::{evaluate, rollout, sim_threads, EpisodeSummary, EpisodeTrace, Evaluation, TraceRecord};

pub type Keypoints2d = SMatrix<f64, 2, 8>;

pub const OBS_DIM: usize = 69;
pub const ACTION_DIM: usize = 18;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no collision-free initial state after {0} attempts")]
    NoCollisionFreeInit(usize),
    #[error("episode is done; call reset")]
    EpisodeDone,
    #[error("unknown task `{0}` (valid: bump, card, card-lite)")]
    UnknownTask(String),
    #[error("unknown policy `{0}` (valid: random, zero, scripted)")]
    UnknownPolicy(String),
    #[error("task `{0}` is not supported here (valid: card-lite)")]
    UnsupportedTask(Task),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Bump,
    Card,
    /// Card with a goal 5 cm from the start, no yaw requirement and no DR.
    CardLite,
}

impl Task {
    pub fn uses_card(self) -> bool {
        matches!(self, Task::Card | Task::CardLite)
    }

    /// Order of the object's symmetry about z (cube 4, card 2).
    pub fn yaw_symmetry(self) -> u32 {
        if self.uses_card() {
            2
        } else {
            4
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Bump => "bump",
            Task::Card => "card",
            Task::CardLite => "card-lite",
        })
    }
}

impl FromStr for Task {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bump" => Ok(Task::Bump),
            "card" => Ok(Task::Card),
            "card-lite" => Ok(Task::CardLite),
            _ => Err(EnvError::UnknownTask(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    /// rad
    pub dq_max: f64,
    pub kp_max: f64,
    pub kd_max: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            dq_max: 0.2,
            kp_max: 60.0,
            kd_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub keypoint: f64,
    pub action: f64,
    pub success: f64,
    pub fell: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            keypoint: 1.0,
            action: 0.001,
            success: 10.0,
            fell: 5.0,
        }
    }
}

/// Axis-aligned rectangle on the table plane, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn centered(center: [f64; 2], size: [f64; 2]) -> Self {
        Self {
            min: [center[0] - size[0] / 2.0, center[1] - size[1] / 2.0],
            max: [center[0] + size[0] / 2.0, center[1] + size[1] / 2.0],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    fn sample(&self, rng: &mut SimRng) -> [f64; 2] {
        std::array::from_fn(|k| {
            if self.max[k] > self.min[k] {
                rng.random_range(self.min[k]..self.max[k])
            } else {
                self.min[k]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub task: Task,
    /// Bump only: 1 moves the cube right to left, 2 left to right.
    pub scenario: u8,
    pub max_steps: usize,
    /// Success radius on the object centre, m.
    pub eps_pos: f64,
    /// Success tolerance on yaw modulo the object's symmetry, rad.
    pub eps_yaw: f64,
    pub require_yaw: bool,
    pub init_region: Region,
    /// Goal region; card-lite instead places the goal `goal_distance` from the start.
    pub goal_region: Region,
    /// card-lite goal offset, m.
    pub goal_distance: f64,
    pub dr: DrConfig,
    pub seed: u64,
    pub bounds: ActionBounds,
    pub reward: RewardWeights,
    pub sim: SimConfig,
    pub scene: SceneModel,
}

impl EpisodeConfig {
    pub fn new(task: Task) -> Self {
        let scene = SceneModel::default();
        let [cx, cy] = scene.table_center;
        let [depth, width] = scene.table_size;
        let half_left = cy + width / 4.0 + scene.bump_width / 4.0;
        let half_right = cy - width / 4.0 - scene.bump_width / 4.0;
        let (init_region, goal_region, max_steps, dr) = match task {
            Task::Bump => (
                Region::centered([cx, half_right], [0.15, 0.20]),
                Region::centered([cx, half_left], [0.15, 0.20]),
                100,
                DrConfig::default(),
            ),
            Task::Card => {
                let margin = 0.05;
                let interior = Region::centered([cx, cy], [depth - 2.0 * margin, width - 2.0 * margin]);
                (interior, interior, 100, DrConfig::default())
            }
            Task::CardLite => {
                let r = Region::centered([0.30, 0.0], [0.10, 0.20]);
                (r, r, 40, DrConfig::disabled())
            }
        };
        Self {
            task,
            scenario: 1,
            max_steps,
            eps_pos: 0.025,
            eps_yaw: 0.2,
            require_yaw: task != Task::CardLite,
            init_region,
            goal_region,
            goal_distance: 0.05,
            dr,
            seed: 0,
            bounds: ActionBounds::default(),
            reward: RewardWeights::default(),
            sim: SimConfig::default(),
            scene,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.task == Task::Bump && !(self.scenario == 1 || self.scenario == 2) {
            return bad(format!("scenario must be 1 or 2, got {}", self.scenario));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1".into());
        }
        if !(self.eps_pos > 0.0 && self.eps_yaw > 0.0) {
            return bad("success thresholds must be > 0".into());
        }
        let b = &self.bounds;
        if !(b.dq_max > 0.0 && b.kp_max > 0.0 && b.kd_max >= 0.0) {
            return bad("action bounds must be positive".into());
        }
        for r in [&self.init_region, &self.goal_region] {
            if !(r.min[0] <= r.max[0] && r.min[1] <= r.max[1]) {
                return bad("region min must not exceed max".into());
            }
        }
        self.dr.validate().map_err(EnvError::InvalidConfig)?;
        self.sim.validate().map_err(EnvError::InvalidConfig)?;
        self.scene.validate().map_err(|e| EnvError::InvalidConfig(e.to_string()))
    }

    pub fn object_dims(&self) -> [f64; 3] {
        if self.task.uses_card() {
            self.scene.card_dims
        } else {
            [self.scene.cube_edge; 3]
        }
    }

    /// Init and goal regions with the bump scenario applied.
    fn regions(&self) -> (Region, Region) {
        if self.task == Task::Bump && self.scenario == 2 {
            (self.goal_region, self.init_region)
        } else {
            (self.init_region, self.goal_region)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Joint position residual, rad.
    pub dq: Vector6,
    pub kp: Vector6,
    pub kd: Vector6,
}

impl Action {
    pub fn zeros() -> Self {
        Self {
            dq: Vector6::zeros(),
            kp: Vector6::zeros(),
            kd: Vector6::zeros(),
        }
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        std::array::from_fn(|i| match i / 6 {
            0 => self.dq[i],
            1 => self.kp[i - 6],
            _ => self.kd[i - 12],
        })
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), ACTION_DIM, "action has {ACTION_DIM} entries");
        Self {
            dq: Vector6::from_column_slice(&v[0..6]),
            kp: Vector6::from_column_slice(&v[6..12]),
            kd: Vector6::from_column_slice(&v[12..18]),
        }
    }

    /// Clamps into the bounds; the flag reports whether anything changed.
    /// Non-finite entries become zero.
    pub fn clamped(&self, bounds: &ActionBounds) -> (Action, bool) {
        let fix = |v: f64, lo: f64, hi: f64| if v.is_finite() { v.clamp(lo, hi) } else { 0.0 };
        let out = Action {
            dq: self.dq.map(|v| fix(v, -bounds.dq_max, bounds.dq_max)),
            kp: self.kp.map(|v| fix(v, 0.0, bounds.kp_max)),
            kd: self.kd.map(|v| fix(v, 0.0, bounds.kd_max)),
        };
        let changed = out.to_array().iter().zip(self.to_array()).any(|(a, b)| a.to_bits() != b.to_bits());
        (out, changed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub q: Vector6,
    pub qdot: Vector6,
    pub object_keypoints: Keypoints2d,
    pub goal_keypoints: Keypoints2d,
    /// Position, then unit quaternion w-first with w >= 0.
    pub ee_pose: [f64; 7],
    pub prev_action: [f64; ACTION_DIM],
}

impl Observation {
    /// `q, qdot, object keypoints (x0,y0,x1,…), goal keypoints, ee pose, prev action`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend(self.q.iter());
        v.extend(self.qdot.iter());
        v.extend(self.object_keypoints.iter());
        v.extend(self.goal_keypoints.iter());
        v.extend(self.ee_pose);
        v.extend(self.prev_action);
        debug_assert_eq!(v.len(), OBS_DIM);
        v
    }

    pub fn ee_position(&self) -> Vector3<f64> {
        Vector3::new(self.ee_pose[0], self.ee_pose[1], self.ee_pose[2])
    }

    pub fn object_center(&self) -> [f64; 2] {
        centroid(&self.object_keypoints)
    }

    pub fn goal_center(&self) -> [f64; 2] {
        centroid(&self.goal_keypoints)
    }
}

fn centroid(k: &Keypoints2d) -> [f64; 2] {
    let c = k.column_mean();
    [c[0], c[1]]
}

/// Corners of the object's box, projected orthographically onto the table
/// plane, in the box's canonical corner order (bit 0 → x, bit 1 → y, bit 2 → z).
pub fn project_keypoints(pose: &FramePose, dims: [f64; 3]) -> Keypoints2d {
    let half = Vector3::from(dims) / 2.0;
    let corners = box_corners(&half);
    Keypoints2d::from_fn(|r, c| pose.transform_point(&corners[c])[r])
}

/// Yaw of the body x axis in the table plane.
pub fn yaw_of(pose: &FramePose) -> f64 {
    let x = pose.rotation * Vector3::x();
    x.y.atan2(x.x)
}

/// Absolute yaw difference modulo `2π / symmetry`.
pub fn yaw_error(a: f64, b: f64, symmetry: u32) -> f64 {
    let period = std::f64::consts::TAU / symmetry as f64;
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DoneReason {
    Success,
    Fell,
    Budget,
}

impl fmt::Display for DoneReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DoneReason::Success => "success",
            DoneReason::Fell => "fell",
            DoneReason::Budget => "budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepInfo {
    pub success: bool,
    pub reason: Option<DoneReason>,
    pub action_clamped: bool,
    pub physics_steps: usize,
    /// Simulated time, s.
    pub time: f64,
    pub position_error: f64,
    pub yaw_error: f64,
    pub keypoint_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Goal pose of the object's centre on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Goal {
    pub xy: [f64; 2],
    pub yaw: f64,
}

pub struct Env {
    config: EpisodeConfig,
    model: RobotModel,
    world: WorldState,
    sim_config: SimConfig,
    goal: Goal,
    dr: DrSample,
    sim_rng: SimRng,
    obs_rng: SimRng,
    steps: usize,
    done: bool,
    success_granted: bool,
    prev_action: [f64; ACTION_DIM],
}

const RESET_ATTEMPTS: usize = 100;

/// Positional IK for the EE point by iterated damped least squares.
pub fn solve_ee_ik(model: &RobotModel, seed: &Vector6, target: &Vector3<f64>, iterations: usize) -> (Vector6, f64) {
    let mut q = *seed;
    for _ in 0..iterations {
        let fk = forward_kinematics(model, &q);
        let p = fk.ee_position();
        let e = target - p;
        if e.norm() < 1e-6 {
            break;
        }
        let j = fk.point_jacobian(5, &p);
        let step = dls(&[(1.0, j, e)], 1e-4, 1.0);
        let n = step.amax();
        let step = if n > 0.3 { step * (0.3 / n) } else { step };
        q = model.clamp_to_limits(&(q + step));
    }
    let err = (forward_kinematics(model, &q).ee_position() - target).norm();
    (q, err)
}

impl Env {
    pub fn reset(config: &EpisodeConfig) -> Result<(Env, Observation), EnvError> {
        Self::reset_with_model(config, default_armada_model())
    }

    pub fn reset_with_model(config: &EpisodeConfig, model: RobotModel) -> Result<(Env, Observation), EnvError> {
        config.validate()?;
        let mut rng = stream(config.seed, 0);
        let scene = &config.scene;
        let top = scene.table_top();
        let dims = config.object_dims();
        let (init_region, goal_region) = config.regions();

        let mut obstacles = vec![table_obstacle(scene)];
        if config.task == Task::Bump {
            obstacles.push(bump_obstacle(scene));
        }

        for _ in 0..RESET_ATTEMPTS {
            let xy = init_region.sample(&mut rng);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let goal = if config.task == Task::CardLite {
                let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                Goal {
                    xy: [
                        xy[0] + config.goal_distance * heading.cos(),
                        xy[1] + config.goal_distance * heading.sin(),
                    ],
                    yaw,
                }
            } else {
                Goal {
                    xy: goal_region.sample(&mut rng),
                    yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                }
            };
            let ee_target = Vector3::new(
                rng.random_range(0.22..0.40),
                rng.random_range(-0.15..0.15),
                top + rng.random_range(0.10..0.18),
            );
            let ik_seed = Vector6::new(ee_target.y.atan2(ee_target.x), 0.0, -0.3, -1.8, 1.2, 0.0);
            let (q, err) = solve_ee_ik(&model, &ik_seed, &ee_target, 100);
            if err > 5e-3 {
                continue;
            }

            let mut object = if config.task.uses_card() {
                RigidBodyState::cuboid("card", dims, scene.card_mass, scene.card_friction, Vector3::zeros())
            } else {
                RigidBodyState::cuboid("cube", dims, scene.cube_mass, scene.cube_friction, Vector3::zeros())
            };
            object.position = Vector3::new(xy[0], xy[1], top + dims[2] / 2.0);
            object.orientation = nalgebra::UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);

            let world = WorldState {
                arm: crate::kinematics::JointState::at_rest(q),
                bodies: vec![object],
                obstacles: obstacles.clone(),
                time: 0.0,
            };
            let (world, dr) = randomize(&world, &model, &config.dr, &mut rng);
            if !collision_free(&model, &world, config.sim.ee_radius) {
                continue;
            }
            let sim_config = SimConfig {
                torque_noise_std: dr.torque_std,
                ..config.sim.clone()
            };
            let mut env = Env {
                config: config.clone(),
                model,
                world,
                sim_config,
                goal,
                dr,
                sim_rng: stream(config.seed, 1),
                obs_rng: stream(config.seed, 2),
                steps: 0,
                done: false,
                success_granted: false,
                prev_action: [0.0; ACTION_DIM],
            };
            let obs = env.observe();
            return Ok((env, obs));
        }
        Err(EnvError::NoCollisionFreeInit(RESET_ATTEMPTS))
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut WorldState {
        &mut self.world
    }

    pub fn goal(&self) -> Goal {
        self.goal
    }

    pub fn set_goal(&mut self, goal: Goal) {
        self.goal = goal;
    }

    pub fn dr_sample(&self) -> &DrSample {
        &self.dr
    }

    pub fn table_top(&self) -> f64 {
        self.world.obstacles[0].top()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn object_pose(&self) -> FramePose {
        self.world.bodies[0].pose()
    }

    fn goal_pose(&self) -> FramePose {
        let z = self.table_top() + self.config.object_dims()[2] / 2.0;
        FramePose::new(
            nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), self.goal.yaw),
            Vector3::new(self.goal.xy[0], self.goal.xy[1], z),
        )
    }

    pub fn observe(&mut self) -> Observation {
        let dims = self.config.object_dims();
        let fk = forward_kinematics(&self.model, &self.world.arm.q);
        let mut p = fk.ee_position();
        if self.dr.ee_position_std > 0.0 {
            let n = Normal::new(0.0, self.dr.ee_position_std).expect("finite std");
            p += Vector3::from_fn(|_, _| n.sample(&mut self.obs_rng));
        }
        let quat = fk.ee.quaternion_wxyz();
        Observation {
            q: self.world.arm.q,
            qdot: self.world.arm.qdot,
            object_keypoints: project_keypoints(&self.object_pose(), dims),
            goal_keypoints: project_keypoints(&self.goal_pose(), dims),
            ee_pose: [p.x, p.y, p.z, quat[0], quat[1], quat[2], quat[3]],
            prev_action: self.prev_action,
        }
    }

    /// (centre distance in the table plane, yaw error, mean keypoint distance).
    pub fn errors(&self) -> (f64, f64, f64) {
        let dims = self.config.object_dims();
        let pose = self.object_pose();
        let goal = self.goal_pose();
        let dx = pose.translation.x - goal.translation.x;
        let dy = pose.translation.y - goal.translation.y;
        let yaw = yaw_error(yaw_of(&pose), self.goal.yaw, self.config.task.yaw_symmetry());
        let a = project_keypoints(&pose, dims);
        let b = project_keypoints(&goal, dims);
        let kp = (0..8).map(|c| (a.column(c) - b.column(c)).norm()).sum::<f64>() / 8.0;
        ((dx * dx + dy * dy).sqrt(), yaw, kp)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let (action, clamped) = action.clamped(&self.config.bounds);
        let command = JointCommand::Pd {
            target: self.world.arm.q + action.dq,
            gains: PdGains {
                kp: action.kp,
                kd: action.kd,
            },
        };
        let substeps = self.sim_config.control_substeps;
        for _ in 0..substeps {
            sim::step(&mut self.world, &self.model, &command, &self.sim_config, &mut self.sim_rng)?;
        }
        self.steps += 1;
        self.prev_action = action.to_array();

        let (pos_err, yaw_err, kp_err) = self.errors();
        let fell = self.world.bodies[0].position.z < self.table_top() - 0.1;
        let success = !fell && pos_err <= self.config.eps_pos && (!self.config.require_yaw || yaw_err <= self.config.eps_yaw);
        let w = &self.config.reward;
        let mut reward = -w.keypoint * kp_err - w.action * action.dq.norm_squared();
        if success && !self.success_granted {
            reward += w.success;
            self.success_granted = true;
        }
        if fell {
            reward -= w.fell;
        }
        let reason = if success {
            Some(DoneReason::Success)
        } else if fell {
            Some(DoneReason::Fell)
        } else if self.steps >= self.config.max_steps {
            Some(DoneReason::Budget)
        } else {
            None
        };
        self.done = reason.is_some();
        let observation = self.observe();
        Ok(StepOutcome {
            observation,
            reward,
            done: self.done,
            info: StepInfo {
                success,
                reason,
                action_clamped: clamped,
                physics_steps: substeps,
                time: self.world.time,
                position_error: pos_err,
                yaw_error: yaw_err,
                keypoint_error: kp_err,
            },
        })
    }
}

pub fn table_obstacle(scene: &SceneModel) -> Obstacle {
    let thickness = 0.05;
    Obstacle {
        name: "table".into(),
        center: Vector3::new(scene.table_center[0], scene.table_center[1], scene.table_top() - thickness / 2.0),
        half: Vector3::new(scene.table_size[0] / 2.0, scene.table_size[1] / 2.0, thickness / 2.0),
        friction: scene.table_friction,
    }
}

/// Ridge along x at `y = table centre`, splitting the table into halves.
pub fn bump_obstacle(scene: &SceneModel) -> Obstacle {
    Obstacle {
        name: "bump".into(),
        center: Vector3::new(scene.table_center[0], scene.table_center[1], scene.table_top() + scene.bump_height / 2.0),
        half: Vector3::new(scene.table_size[0] / 2.0, scene.bump_width / 2.0, scene.bump_height / 2.0),
        friction: scene.table_friction,
    }
}

/// Elbow, wrist and the link midpoints at least 3 cm outside every box, and
/// the EE sphere clear of every box by 1 cm.
fn collision_free(model: &RobotModel, world: &WorldState, ee_radius: f64) -> bool {
    let fk = forward_kinematics(model, &world.arm.q);
    let shoulder = fk.joint_origin(2);
    let k = keypoints(model, &world.arm.q);
    let points = [k.elbow, k.wrist, 0.5 * (shoulder + k.elbow), 0.5 * (k.elbow + k.wrist)];
    let inflated = |o: &Obstacle, m: f64| Obstacle {
        half: o.half.add_scalar(m),
        ..o.clone()
    };
    for o in &world.obstacles {
        let big = inflated(o, 0.03);
        if points.iter().any(|p| sim::contact::point_in_aabb(p, &big).is_some()) {
            return false;
        }
        if sim::contact::sphere_vs_aabb(&k.ee, ee_radius + 0.01, o).is_some() {
            return false;
        }
    }
    !world.bodies.iter().any(|b| match b.half_extents() {
        Some(half) => sphere_vs_obb(&k.ee, ee_radius + 0.01, &b.pose(), &half).is_some(),
        None => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, UnitQuaternion};
    use rand::SeedableRng;

    #[test]
    fn axis_aligned_cube_projects_to_square() {
        let k = project_keypoints(&FramePose::identity(), [0.09; 3]);
        for c in 0..8 {
            assert!((k[(0, c)].abs() - 0.045).abs() < 1e-15);
            assert!((k[(1, c)].abs() - 0.045).abs() < 1e-15);
        }
        // each footprint corner appears twice (top and bottom)
        for c in 0..4 {
            assert_eq!(k.column(c), k.column(c + 4));
        }
    }

    #[test]
    fn quarter_turn_permutes_cube_keypoints() {
        let a = project_keypoints(&FramePose::identity(), [0.09; 3]);
        let pose = FramePose::new(Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2), Vector3::zeros());
        let b = project_keypoints(&pose, [0.09; 3]);
        assert_ne!(a, b);
        for c in 0..8 {
            assert!((0..8).any(|d| (a.column(c) - b.column(d)).norm() < 1e-12));
        }
    }

    #[test]
    fn random_pose_matches_explicit_corners() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dims = [0.0856, 0.054, 0.001];
        for _ in 0..100 {
            let rot = UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
            let pose = FramePose::new(rot.to_rotation_matrix(), t);
            let k = project_keypoints(&pose, dims);
            for c in 0..8 {
                let sx = if c & 1 != 0 { 0.5 } else { -0.5 };
                let sy = if c & 2 != 0 { 0.5 } else { -0.5 };
                let sz = if c & 4 != 0 { 0.5 } else { -0.5 };
                let local = Vector3::new(sx * dims[0], sy * dims[1], sz * dims[2]);
                let world = rot * local + t;
                assert!((k[(0, c)] - world.x).abs() < 1e-12);
                assert!((k[(1, c)] - world.y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn yaw_error_respects_symmetry() {
        let q = std::f64::consts::FRAC_PI_2;
        assert!(yaw_error(q, 0.0, 4) < 1e-12);
        assert!((yaw_error(q, 0.0, 2) - q).abs() < 1e-12);
        assert!((yaw_error(0.1, -0.1, 4) - 0.2).abs() < 1e-12);
        assert!((yaw_error(3.1, -3.1, 2) - (std::f64::consts::TAU - 6.2)).abs() < 1e-9);
    }

    #[test]
    fn clamping_flags_out_of_bounds_actions() {
        let bounds = ActionBounds::default();
        let ok = Action {
            dq: Vector6::repeat(0.1),
            kp: Vector6::repeat(30.0),
            kd: Vector6::repeat(1.0),
        };
        assert_eq!(ok.clamped(&bounds), (ok, false));
        let mut wild = ok;
        wild.dq[2] = 3.0;
        wild.kp[0] = -1.0;
        wild.kd[5] = f64::NAN;
        let (c, flagged) = wild.clamped(&bounds);
        assert!(flagged);
        assert_eq!(c.dq[2], 0.2);
        assert_eq!(c.kp[0], 0.0);
        assert_eq!(c.kd[5], 0.0);
        assert_eq!(Action::from_slice(&ok.to_array()), ok);
    }

    #[test]
    fn task_names_round_trip() {
        for t in [Task::Bump, Task::Card, Task::CardLite] {
            assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
        }
        assert!(matches!("cube".parse::<Task>(), Err(EnvError::UnknownTask(_))));
    }

    #[test]
    fn ik_reaches_hover_points() {
        let model = default_armada_model();
        for (x, y) in [(0.22f64, -0.15f64), (0.40, 0.15), (0.3, 0.0)] {
            let target = Vector3::new(x, y, 0.5);
            let seed = Vector6::new(y.atan2(x), 0.0, -0.3, -1.8, 1.2, 0.0);
            let (_, err) = solve_ee_ik(&model, &seed, &target, 100);
            assert!(err < 1e-3, "({x}, {y}): {err}");
        }
    }
}
