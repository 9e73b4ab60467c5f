//! One line per acceptance criterion, then a single assertion over all of them.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::time::{Duration, Instant};

use armada::analysis::{ballistic_range, impact_force, repeatability_from_stats};
use armada::env::*;
use armada::kinematics::{actuator_to_joint, forward_kinematics, geometric_jacobian, joint_torque_to_actuator, ELBOW};
use armada::model::{default_armada_model, Link, Placement, RobotModel, Vector6};
use armada::retarget::*;
use armada::rng::stream;
use armada::sim::dynamics::{inverse_dynamics, Wrench};
use armada::sim::{randomize, DrConfig};
use common::tracking::{bimanual_recording, inter_wrist_mismatch};
use common::*;
use nalgebra::{Matrix3, Matrix6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, limit: Duration, f: impl FnOnce() -> (bool, String)) -> Check {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    Check {
        name,
        pass: ok && in_time,
        detail: format!("{detail}; {:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()),
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// (mu, sigma, printed R) in mm
const TABLE: [(&str, f64, f64, f64); 6] = [
    ("P1", 1.048, 0.546, 2.687),
    ("P2", 1.042, 0.409, 2.269),
    ("P3", 0.939, 0.689, 3.006),
    ("P4", 0.751, 0.520, 2.311),
    ("P5", 1.104, 0.584, 2.857),
    ("Average", 0.977, 0.550, 2.626),
];

fn repeatability_table() -> (bool, String) {
    let worst = TABLE
        .iter()
        .map(|(_, mu, sigma, r)| (repeatability_from_stats(*mu, *sigma) - r).abs())
        .fold(0.0, f64::max);
    (worst <= 0.002 + 1e-12, format!("worst |R - printed| = {worst:.4} mm"))
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

fn jacobian_vs_finite_differences() -> (bool, String) {
    let model = default_armada_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = Vector6::from_fn(|j, _| rng.random_range(model.joints[j].lower..model.joints[j].upper));
        let j = geometric_jacobian(&model, &q);
        let r = forward_kinematics(&model, &q).ee.rotation.into_inner();
        let mut fd = Matrix6::zeros();
        for k in 0..6 {
            let (mut qp, mut qm) = (q, q);
            qp[k] += eps;
            qm[k] -= eps;
            let (p, m) = (forward_kinematics(&model, &qp).ee, forward_kinematics(&model, &qm).ee);
            let v = (p.translation - m.translation) / (2.0 * eps);
            let dr = (p.rotation.into_inner() - m.rotation.into_inner()) / (2.0 * eps);
            let w = vee(&(dr * r.transpose()));
            fd.fixed_view_mut::<3, 1>(0, k).copy_from(&v);
            fd.fixed_view_mut::<3, 1>(3, k).copy_from(&w);
        }
        worst = worst.max((j - fd).norm() / j.norm());
    }
    (worst < 1e-5, format!("max relative error {worst:.2e} over 1000 configurations"))
}

fn point_mass_pendulum(m: f64, l: f64) -> RobotModel {
    let mut model = default_armada_model();
    for link in model.links.iter_mut() {
        link.mass = 0.0;
        link.inertia = [[0.0; 3]; 3];
    }
    model.links[2] = Link {
        mass: m,
        com: [l, 0.0, 0.0],
        ..model.links[2].clone()
    };
    model.gripper_mass = 0.0;
    for a in model.actuators.iter_mut() {
        a.rotor_inertia = 0.0;
    }
    model.base = Placement::default();
    model
}

fn dynamics_sanity() -> (bool, String) {
    let (m, l, g) = (0.7, 0.23, 9.81);
    let model = point_mass_pendulum(m, l);
    let mut worst_tau: f64 = 0.0;
    for k in 0..61 {
        let theta = -3.0 + 0.1 * k as f64;
        let q = Vector6::new(0.0, 0.0, theta, 0.0, 0.0, 0.0);
        let tau = inverse_dynamics(&model, &q, &Vector6::zeros(), &Vector6::zeros(), &Wrench::zero(), 0.0, g);
        // a horizontal link (theta = 0) hangs at phi = -pi/2 from the downward vertical
        let closed = m * g * l * (theta - FRAC_PI_2).sin();
        worst_tau = worst_tau.max((tau[2] - closed).abs());
    }
    let seconds = 2.0;
    let energy = free_swing_energy(&unlimited_model(), Vector6::new(0.3, 0.4, -0.2, -0.8, 0.6, 0.2), seconds);
    let e0 = energy[0];
    let drift = energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs() / seconds;
    (
        worst_tau < 1e-9 && drift < 5e-3,
        format!("gravity torque error {worst_tau:.1e} N m, energy drift {:.3}%/s", drift * 100.0),
    )
}

fn coupling() -> (bool, String) {
    let model = default_armada_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rnd = |s: f64| Vector6::from_fn(|_, _| rng.random_range(-s..s));
    let mut worst_power: f64 = 0.0;
    for _ in 0..1000 {
        let (qdot_act, tau_joint) = (rnd(5.0), rnd(10.0));
        let lhs = qdot_act.dot(&joint_torque_to_actuator(&model, &tau_joint));
        let rhs = actuator_to_joint(&model, &qdot_act).dot(&tau_joint);
        worst_power = worst_power.max((lhs - rhs).abs());
    }
    let mut worst_pitch: f64 = 0.0;
    for _ in 0..100 {
        let a = rnd(1.0);
        let forearm = |a: &Vector6| forward_kinematics(&model, &actuator_to_joint(&model, a)).links[ELBOW].rotation;
        let reference = forearm(&a);
        for k in 0..10 {
            let mut b = a;
            b[2] += -1.0 + 0.2 * k as f64;
            worst_pitch = worst_pitch.max((reference.matrix() - forearm(&b).matrix()).norm());
        }
    }
    (
        worst_power <= 1e-12 && worst_pitch <= 1e-9,
        format!("power mismatch {worst_power:.1e} W, forearm rotation matrix change {worst_pitch:.1e}"),
    )
}

fn contact_physics() -> (bool, String) {
    let model = default_armada_model();
    let mu = 0.9;
    let analytic = 0.09 / (2.0 * mu);
    let (_, boundary) = slide_tip_boundary(&model, mu);
    let (_, drift) = resting_cube(&model);
    match boundary {
        Some(b) => {
            let rel = ((b - analytic) / analytic).abs();
            (
                rel < 0.1 && drift < 1e-3,
                format!("boundary {b:.4} m vs {analytic:.4} m ({:.1}%), drift {:.2e} m", rel * 100.0, drift),
            )
        }
        None => (false, "no slide to tip transition found".into()),
    }
}

fn mdp_contract() -> (bool, String) {
    let model = default_armada_model();
    let mut obs_ok = true;
    let mut steps_ok = true;
    for task in [Task::Bump, Task::Card, Task::CardLite] {
        let cfg = EpisodeConfig { seed: 1, ..EpisodeConfig::new(task) };
        let (mut env, obs) = Env::reset_with_model(&cfg, model.clone()).unwrap();
        obs_ok &= obs.flatten().len() == OBS_DIM;
        let mut policy = make_policy(&PolicyKind::Random, &cfg, &model);
        policy.reset(&obs);
        let mut obs = obs;
        loop {
            let out = env.step(&policy.act(&obs)).unwrap();
            obs_ok &= out.observation.flatten().len() == 69;
            steps_ok &= out.info.physics_steps == 10;
            obs = out.observation;
            if out.done {
                break;
            }
        }
    }
    let world = cube_world(0.09, 0.2, 0.5, 0.5);
    let dr = DrConfig::default();
    let samples: Vec<_> = (0..10_000).map(|i| randomize(&world, &model, &dr, &mut stream(99, i)).1).collect();
    let dr_ok = dr_within_bounds(&samples);
    (
        obs_ok && steps_ok && dr_ok,
        format!("obs length ok: {obs_ok}, 10 substeps per step: {steps_ok}, 10^4 DR draws in bounds: {dr_ok}"),
    )
}

fn desk_scale_learning() -> (bool, String) {
    let model = default_armada_model();
    let task = EpisodeConfig::new(Task::CardLite);
    let result = train_cem(&task, &model, &CemConfig::default()).unwrap();
    let (first, last) = (result.curve[0], *result.curve.last().unwrap());
    let improvement = (last - first) / first.abs();
    let scripted = evaluate(&task, &model, 20, |c| make_policy(&PolicyKind::Scripted, c, &model)).unwrap();
    let rate = scripted.success_rate();
    (
        improvement >= 0.2 && rate >= 0.8,
        format!(
            "CEM mean return {first:.3} -> {last:.3} ({:+.0}%), scripted success {:.0}%",
            improvement * 100.0,
            rate * 100.0
        ),
    )
}

fn random_q(model: &RobotModel, rng: &mut ChaCha8Rng, margin: f64) -> Vector6 {
    Vector6::from_fn(|j, _| rng.random_range(model.joints[j].lower + margin..model.joints[j].upper - margin))
}

fn retargeting() -> (bool, String) {
    let model = default_armada_model();
    let config = RetargetConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fixpoint: f64 = 0.0;
    for _ in 0..100 {
        let q = random_q(&model, &mut rng, 0.05);
        fixpoint = fixpoint.max(retarget_step(&model, &q, &ArmTargets::of(&model, &q), &config).norm());
    }
    let mut worst_static: f64 = 0.0;
    for _ in 0..20 {
        let goal = random_q(&model, &mut rng, 0.3);
        let targets = ArmTargets::of(&model, &goal);
        let offset = Vector6::from_fn(|_, _| rng.random_range(-0.4..0.4));
        let mut q = model.clamp_to_limits(&(goal + offset));
        for _ in 0..200 {
            q = model.clamp_to_limits(&(q + retarget_step(&model, &q, &targets, &config) * config.dt));
        }
        worst_static = worst_static.max((ArmTargets::of(&model, &q).wrist - targets.wrist).norm());
    }
    let (left, right, raw, human_length, q0) = bimanual_recording(200);
    let frames: Vec<KeypointFrame> =
        raw.iter().map(|f| map_human_to_robot(f, human_length, &left, &right).unwrap()).collect();
    let samples = retarget_trajectory(&left, &right, &frames, &config, q0).unwrap();
    let (mismatch, tracked) = inter_wrist_mismatch(&left, &right, &frames, &samples);
    (
        fixpoint < 1e-10 && worst_static < 1e-3 && mismatch < 0.010 && tracked > 0,
        format!(
            "fixpoint |qdot| {fixpoint:.1e}, static wrist error {:.3} mm after 200 iterations, inter-wrist {:.2} mm over {tracked} frames",
            worst_static * 1e3,
            mismatch * 1e3
        ),
    )
}

/// Integrates the point-mass ODE with RK4 until the ground is crossed, then
/// bisects on the crossing time by re-integrating from the last state.
fn ode_range(v: f64, angle: f64, h0: f64, g: f64) -> f64 {
    let f = |s: [f64; 4]| [s[2], s[3], 0.0, -g];
    let rk4 = |s: [f64; 4], h: f64| {
        let add = |a: [f64; 4], b: [f64; 4], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2], a[3] + k * b[3]];
        let k1 = f(s);
        let k2 = f(add(s, k1, h / 2.0));
        let k3 = f(add(s, k2, h / 2.0));
        let k4 = f(add(s, k3, h));
        let mut out = s;
        for i in 0..4 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    };
    let mut s = [0.0, h0, v * angle.cos(), v * angle.sin()];
    if h0 == 0.0 && s[3] <= 0.0 {
        return 0.0;
    }
    let h = 1e-3;
    loop {
        let next = rk4(s, h);
        if next[1] < 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if rk4(s, mid)[1] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return rk4(s, 0.5 * (lo + hi))[0];
        }
        s = next;
    }
}

fn ballistics() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = rng.random_range(0.5..15.0);
        let angle = rng.random_range(-0.4 * PI..0.45 * PI);
        let h0 = rng.random_range(0.0..2.0);
        let g = rng.random_range(1.0..20.0);
        let closed = ballistic_range(v, angle, h0, g).unwrap().range;
        worst = worst.max((closed - ode_range(v, angle, h0, g)).abs());
    }
    let force = impact_force(1.39, 5.378, 0.013).unwrap();
    (
        worst < 1e-6 && (force - 575.0).abs() <= 0.1,
        format!("worst range difference {worst:.1e} m, impact force {force:.2} N"),
    )
}

fn cli_determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let bad = common::cli::nondeterministic_subcommands(dir.path());
    (bad.is_empty(), if bad.is_empty() { "all subcommands byte-identical".into() } else { format!("differ: {bad:?}") })
}

#[test]
fn acceptance() {
    let checks = [
        check("1 repeatability table", secs(1), repeatability_table),
        check("2 jacobian", secs(5), jacobian_vs_finite_differences),
        check("3 dynamics sanity", secs(10), dynamics_sanity),
        check("4 coupling", secs(60), coupling),
        check("5 contact physics", secs(30), contact_physics),
        check("6 mdp contract", secs(60), mdp_contract),
        check("7 desk-scale learning", secs(600), desk_scale_learning),
        check("8 retargeting", secs(30), retargeting),
        check("9 ballistics", secs(5), ballistics),
        check("10 cli determinism", secs(600), cli_determinism),
    ];
    // written straight to stderr so the lines show up without --nocapture
    let mut err = std::io::stderr().lock();
    for c in &checks {
        writeln!(err, "{} criterion {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail).unwrap();
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
