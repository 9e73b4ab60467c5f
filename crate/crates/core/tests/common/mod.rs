#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use armada::model::{default_armada_model, RobotModel, Vector6};
use armada::rng::stream;
use armada::sim::contact::Obstacle;
use armada::sim::{step_with_loads, BodyLoad, JointCommand, RigidBodyState, SimConfig, WorldState};
use nalgebra::Vector3;

pub const TABLE_TOP: f64 = 0.40;

pub fn table(friction: f64) -> Obstacle {
    Obstacle {
        name: "table".into(),
        center: Vector3::new(0.32, 0.0, TABLE_TOP - 0.05),
        half: Vector3::new(0.20, 0.42, 0.05),
        friction,
    }
}

/// Arm hanging straight down beside the table: a zero-torque equilibrium.
pub fn hanging_q() -> Vector6 {
    Vector6::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0)
}

pub fn cube_world(edge: f64, mass: f64, friction: f64, table_friction: f64) -> WorldState {
    let mut world = WorldState::arm_only(hanging_q());
    world.obstacles.push(table(table_friction));
    world.bodies.push(RigidBodyState::cuboid(
        "cube",
        [edge; 3],
        mass,
        friction,
        Vector3::new(0.32, 0.0, TABLE_TOP + edge / 2.0),
    ));
    world
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PushOutcome {
    Slide { force: f64 },
    Tip { force: f64 },
    Neither,
}

pub struct PushTrial {
    pub outcome: PushOutcome,
    /// Largest `f_t - mu f_n` seen over every contact of the run.
    pub worst_cone_excess: f64,
}

/// Ramps a horizontal +x force on the centre of the cube's -x face at
/// height `h` above the table until the cube slides (2 cm) or tips (0.1 rad).
pub fn push_trial(model: &RobotModel, h: f64, mu: f64, ramp: f64, t_max: f64) -> PushTrial {
    let edge = 0.09;
    let mut world = cube_world(edge, 0.2, mu, mu);
    let config = SimConfig::default();
    let mut rng = stream(0, 0);
    let hold = JointCommand::Torque(Vector6::zeros());
    let start = world.bodies[0].position;
    let local = Vector3::new(-edge / 2.0, 0.0, h - edge / 2.0);
    let mut worst = f64::NEG_INFINITY;
    let steps = (t_max / config.dt).round() as usize;
    for k in 0..steps {
        let force = ramp * k as f64 * config.dt;
        let body = &world.bodies[0];
        let point = body.position + body.orientation * local;
        let load = BodyLoad {
            body: 0,
            point,
            force: Vector3::new(force, 0.0, 0.0),
        };
        let report = step_with_loads(&mut world, model, &hold, &[load], &config, &mut rng).unwrap();
        for c in &report.contacts {
            worst = worst.max(c.tangential_force - c.friction * c.normal_force);
        }
        let body = &world.bodies[0];
        let tilt = body.orientation.angle();
        if tilt > 0.1 {
            return PushTrial {
                outcome: PushOutcome::Tip { force },
                worst_cone_excess: worst,
            };
        }
        if (body.position.x - start.x) > 0.02 {
            return PushTrial {
                outcome: PushOutcome::Slide { force },
                worst_cone_excess: worst,
            };
        }
    }
    PushTrial {
        outcome: PushOutcome::Neither,
        worst_cone_excess: worst,
    }
}

/// Push heights swept for the slide/tip boundary and the boundary found by
/// simulation (midpoint between the last sliding and first tipping height).
pub fn slide_tip_boundary(model: &RobotModel, mu: f64) -> (Vec<(f64, PushTrial)>, Option<f64>) {
    let heights: Vec<f64> = (0..=24).map(|i| 0.02 + 0.0025 * i as f64).collect();
    let trials: Vec<(f64, PushTrial)> = heights
        .iter()
        .map(|&h| (h, push_trial(model, h, mu, 1.0, 6.0)))
        .collect();
    let mut boundary = None;
    for w in trials.windows(2) {
        if matches!(w[0].1.outcome, PushOutcome::Slide { .. }) && matches!(w[1].1.outcome, PushOutcome::Tip { .. }) {
            boundary = Some(0.5 * (w[0].0 + w[1].0));
        }
    }
    (trials, boundary)
}

/// Resting cube for one second: (max penetration, horizontal drift), m.
pub fn resting_cube(model: &RobotModel) -> (f64, f64) {
    let mut world = cube_world(0.09, 0.2, 0.5, 0.5);
    let config = SimConfig::default();
    let mut rng = stream(0, 0);
    let start = world.bodies[0].position;
    let hold = JointCommand::Torque(Vector6::zeros());
    let mut max_depth: f64 = 0.0;
    for _ in 0..200 {
        let report = armada::sim::step(&mut world, model, &hold, &config, &mut rng).unwrap();
        for c in &report.contacts {
            max_depth = max_depth.max(c.depth);
        }
    }
    let end = world.bodies[0].position;
    let drift = ((end.x - start.x).powi(2) + (end.y - start.y).powi(2)).sqrt();
    (max_depth, drift)
}

/// Arm with very wide joint limits so free swings never touch a stop.
pub fn unlimited_model() -> RobotModel {
    let mut model = default_armada_model();
    for j in model.joints.iter_mut() {
        j.lower = -100.0;
        j.upper = 100.0;
    }
    model
}

/// Zero-torque swing with contacts off; returns energy samples once per step.
pub fn free_swing_energy(model: &RobotModel, q0: Vector6, seconds: f64) -> Vec<f64> {
    let config = SimConfig {
        contacts_enabled: false,
        ..SimConfig::default()
    };
    let mut world = WorldState::arm_only(q0);
    let mut rng = stream(0, 0);
    let zero = JointCommand::Torque(Vector6::zeros());
    let steps = (seconds / config.dt).round() as usize;
    let mut energy = vec![armada::sim::arm_energy(model, &world.arm, config.gravity)];
    for _ in 0..steps {
        armada::sim::step(&mut world, model, &zero, &config, &mut rng).unwrap();
        energy.push(armada::sim::arm_energy(model, &world.arm, config.gravity));
    }
    energy
}

/// DR draws taken through `Env::reset` on the card task, seeds `0..n`.
pub fn dr_samples_from_resets(n: u64) -> Vec<armada::sim::DrSample> {
    use armada::env::{Env, EpisodeConfig, Task};
    let model = default_armada_model();
    let mut cfg = EpisodeConfig::new(Task::Card);
    (0..n)
        .map(|seed| {
            cfg.seed = seed;
            let (env, _) = Env::reset_with_model(&cfg, model.clone()).expect("reset");
            env.dr_sample().clone()
        })
        .collect()
}

/// Whether every sample lies inside the default DR ranges.
pub fn dr_within_bounds(samples: &[armada::sim::DrSample]) -> bool {
    let dr = armada::sim::DrConfig::default();
    let inside = |v: f64, [lo, hi]: [f64; 2]| (lo..=hi).contains(&v);
    samples.iter().all(|s| {
        inside(s.table_height_offset, dr.table_height_offset)
            && inside(s.friction_scale, dr.object_friction_scale)
            && inside(s.mass_scale, dr.object_mass_scale)
            && s.ee_position_std == dr.ee_position_std
            && s.torque_std == dr.torque_std
    })
}

pub fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub mod tracking {
    use armada::kinematics::forward_kinematics;
    use armada::model::{default_armada_pair, RobotModel, Vector6};
    use armada::retarget::*;
    use nalgebra::Vector3;

    pub const FRAME_DT: f64 = 0.005;

    fn min_jerk(s: f64) -> f64 {
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }

    /// Right-arm overhand sweep: the wrist travels a 0.5 m arc in 0.4 s with
    /// a minimum-jerk profile. Returns the frames and the starting poses.
    pub fn throwing_sweep() -> (RobotModel, RobotModel, Vec<KeypointFrame>, [Vector6; 2]) {
        let (left, right) = default_armada_pair();
        let q_left = Vector6::new(0.0, 0.0, 0.8, -1.2, 0.0, 0.0);
        let start = Vector6::new(0.0, 0.0, -0.9, -0.3, 0.0, 0.0);
        let fk = forward_kinematics(&right, &start);
        let radius = {
            let d = fk.joint_origin(armada::kinematics::WRIST) - robot_shoulder(&right);
            (d.x * d.x + d.z * d.z).sqrt()
        };
        let sweep = 0.5 / radius;
        let n = (0.4 / FRAME_DT).round() as usize;
        let frames = (0..=n)
            .map(|k| {
                let t = k as f64 * FRAME_DT;
                let mut q = start;
                q[2] += sweep * min_jerk(t / 0.4);
                KeypointFrame {
                    t,
                    left: ArmTargets::of(&left, &q_left),
                    right: ArmTargets::of(&right, &q),
                }
            })
            .collect();
        (left, right, frames, [q_left, start])
    }

    fn wave(model: &RobotModel, phase: f64, t: f64) -> Vector6 {
        Vector6::from_fn(|j, _| {
            let spec = &model.joints[j];
            let mid = 0.5 * (spec.lower + spec.upper);
            let amp = 0.25 * (spec.upper - spec.lower);
            mid + 0.5 * amp * (2.0 * t + phase + j as f64).sin()
        })
    }

    /// Human recording whose mapped targets follow smooth reachable joint
    /// paths of both arms. Returns the models, the raw frames, the human arm
    /// length and the starting poses.
    pub fn bimanual_recording(frames: usize) -> (RobotModel, RobotModel, Vec<HumanFrame>, f64, [Vector6; 2]) {
        let (left, right) = default_armada_pair();
        let human_length = 0.60;
        let scale = left.arm_length() / human_length;
        let robot_mid = 0.5 * (robot_shoulder(&left) + robot_shoulder(&right));
        let human_mid = Vector3::new(0.1, -0.3, 1.4);
        let half_width = Vector3::new(0.0, 0.19, 0.0);
        let to_human = |p: Vector3<f64>| -> [f64; 3] { (human_mid + (p - robot_mid) / scale).into() };
        let raw = (0..frames)
            .map(|k| {
                let t = k as f64 * FRAME_DT;
                let l = ArmTargets::of(&left, &wave(&left, 0.0, t));
                let r = ArmTargets::of(&right, &wave(&right, 1.3, t));
                HumanFrame {
                    t,
                    left: HumanArm {
                        shoulder: (human_mid + half_width).into(),
                        elbow: to_human(l.elbow),
                        wrist: to_human(l.wrist),
                    },
                    right: HumanArm {
                        shoulder: (human_mid - half_width).into(),
                        elbow: to_human(r.elbow),
                        wrist: to_human(r.wrist),
                    },
                }
            })
            .collect();
        let q0 = [wave(&left, 0.0, 0.0), wave(&right, 1.3, 0.0)];
        (left, right, raw, human_length, q0)
    }

    /// Wrist positions of one arm along a retargeted trajectory.
    pub fn wrist_path(model: &RobotModel, samples: &[RetargetSample], left: bool) -> Vec<Vector3<f64>> {
        samples
            .iter()
            .map(|s| forward_kinematics(model, if left { &s.left.q } else { &s.right.q }).joint_origin(armada::kinematics::WRIST))
            .collect()
    }

    /// Worst inter-wrist mismatch over frames where both arms track within
    /// 5 mm, and how many such frames there were.
    pub fn inter_wrist_mismatch(
        left: &RobotModel,
        right: &RobotModel,
        targets: &[KeypointFrame],
        samples: &[RetargetSample],
    ) -> (f64, usize) {
        let wl = wrist_path(left, samples, true);
        let wr = wrist_path(right, samples, false);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for (k, (f, s)) in targets.iter().zip(samples).enumerate() {
            if s.left.wrist_error < 5e-3 && s.right.wrist_error < 5e-3 {
                let robot = wl[k] - wr[k];
                let target = f.left.wrist - f.right.wrist;
                worst = worst.max((robot - target).norm());
                count += 1;
            }
        }
        (worst, count)
    }
}

pub mod cli {
    use std::path::{Path, PathBuf};
    use std::process::{Command, Output};

    use armada::cli::retarget_rest_pose;
    use armada::model::default_armada_pair;
    use armada::retarget::{robot_shoulder, ArmTargets};
    use nalgebra::Vector3;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    pub fn armada(args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_armada"))
            .args(args)
            .output()
            .expect("binary runs")
    }

    pub fn stdout_json(out: &Output) -> serde_json::Value {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).expect("stdout is JSON")
    }

    pub fn stderr_json(out: &Output) -> serde_json::Value {
        assert!(!out.status.success());
        serde_json::from_slice(&out.stderr).expect("stderr is JSON")
    }

    pub fn path(dir: &Path, name: &str) -> PathBuf {
        dir.join(name)
    }

    /// Human keypoints whose mapped targets are exactly the robot keypoints
    /// at the default start pose, for `frames` frames.
    pub fn write_fixpoint_keypoints(file: &Path, frames: usize) {
        let (left, right) = default_armada_pair();
        let q = retarget_rest_pose();
        let human_length = 0.62;
        let scale = left.arm_length() / human_length;
        let robot_mid = 0.5 * (robot_shoulder(&left) + robot_shoulder(&right));
        let human_mid = Vector3::new(0.05, 0.0, 1.35);
        let h = |p: Vector3<f64>| -> Vec<f64> { (human_mid + (p - robot_mid) / scale).iter().copied().collect() };
        let arm = |m| {
            let t = ArmTargets::of(m, &q);
            serde_json::json!({ "shoulder": h(robot_shoulder(m)), "elbow": h(t.elbow), "wrist": h(t.wrist) })
        };
        let mut text = String::new();
        for k in 0..frames {
            let line = serde_json::json!({ "t": k as f64 * 0.02, "left": arm(&left), "right": arm(&right) });
            text += &format!("{line}\n");
        }
        std::fs::write(file, text).unwrap();
    }

    /// Seeded Gaussian clusters around five targets, `per_target` rows each,
    /// in mm. Returns the points grouped by target.
    pub fn write_repeatability_csv(file: &Path, seed: u64, per_target: usize) -> Vec<(String, Vec<Vector3<f64>>)> {
        let mut rng = armada::rng::stream(seed, 0);
        let mut groups = Vec::new();
        let mut text = String::from("target_id,x_mm,y_mm,z_mm\n");
        for t in 1..=5 {
            let centre = Vector3::new(300.0 + 20.0 * t as f64, rng.random_range(-100.0..100.0), 450.0);
            let std = 0.2 + 0.1 * t as f64;
            let n = Normal::new(0.0, std).unwrap();
            let pts: Vec<Vector3<f64>> = (0..per_target)
                .map(|_| centre + Vector3::from_fn(|_, _| n.sample(&mut rng)))
                .collect();
            for p in &pts {
                text += &format!("P{t},{:.6},{:.6},{:.6}\n", p.x, p.y, p.z);
            }
            groups.push((format!("P{t}"), pts));
        }
        std::fs::write(file, text).unwrap();
        groups
    }

    pub fn write_calibration_csv(file: &Path) {
        std::fs::write(
            file,
            "current_A,torque_Nm\n0.5,0.3\n2.0,2.1\n5.0,5.8\n9.0,10.4\n12.0,13.6\n",
        )
        .unwrap();
    }

    /// One argv per subcommand, writing into `dir`. The inputs are created
    /// there first. Returns (name, argv, files the command writes).
    pub fn subcommand_cases(dir: &Path) -> Vec<(&'static str, Vec<String>, Vec<PathBuf>)> {
        let p = |n: &str| path(dir, n);
        write_fixpoint_keypoints(&p("keypoints.jsonl"), 10);
        write_repeatability_csv(&p("points.csv"), 3, 30);
        write_calibration_csv(&p("calib.csv"));
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let d = |n: &str| p(n).display().to_string();
        vec![
            ("speedtest", s(&["speedtest", "--seed", "0", "--out", &d("speed.csv")]), vec![p("speed.csv")]),
            (
                "repeatability",
                s(&["repeatability", "--input", &d("points.csv"), "--out", &d("report.csv")]),
                vec![p("report.csv")],
            ),
            (
                "env",
                s(&[
                    "env", "--task", "card", "--policy", "random", "--episodes", "4", "--seed", "7", "--out",
                    &d("summary.csv"), "--traces", &d("traces.jsonl"),
                ]),
                vec![p("summary.csv"), p("traces.jsonl")],
            ),
            (
                "train",
                s(&[
                    "train", "--iterations", "2", "--population", "4", "--episodes", "1", "--seed", "3",
                    "--out-params", &d("params.json"), "--out-curve", &d("curve.csv"),
                ]),
                vec![p("params.json"), p("curve.csv")],
            ),
            (
                "retarget",
                s(&[
                    "retarget", "--input", &d("keypoints.jsonl"), "--out-left", &d("left.csv"), "--out-right",
                    &d("right.csv"),
                ]),
                vec![p("left.csv"), p("right.csv")],
            ),
            ("ballistics", s(&["ballistics", "--v", "6.135", "--angle", "0", "--h0", "0.65"]), vec![]),
            ("impact", s(&["impact", "--mass", "1.39", "--dv", "5.378", "--duration", "0.013"]), vec![]),
            (
                "calibrate",
                s(&["calibrate", "--samples", &d("calib.csv"), "--out", &d("plot.csv")]),
                vec![p("plot.csv")],
            ),
        ]
    }

    /// Runs every case twice; returns the names whose stdout or files differ.
    pub fn nondeterministic_subcommands(dir: &Path) -> Vec<String> {
        let mut bad = Vec::new();
        for (name, argv, files) in subcommand_cases(dir) {
            let args: Vec<&str> = argv.iter().map(String::as_str).collect();
            let run = || {
                let out = armada(&args);
                assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
                let contents: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).expect("output written")).collect();
                (out.stdout, contents)
            };
            if run() != run() {
                bad.push(name.to_string());
            }
        }
        bad
    }
}
