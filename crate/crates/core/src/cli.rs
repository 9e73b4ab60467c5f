//! Experiment runners behind the `armada` binary.
//!
//! Every subcommand is a pure function of its arguments and input files:
//! results go to the `--out` files and a JSON summary goes to stdout. Errors
//! are reported as a single JSON object on stderr with a nonzero exit code.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::actuation::{current_ratios, gravity_torques, lifting_posture, torque_from_current, CalibrationError, CalibrationTable, PdGains};
use crate::analysis::{
    ballistic_range, impact_force, read_repeatability_csv, required_launch_speed, speed_metrics, AnalysisError,
    RepeatabilityReport, SpeedMetrics, STANDARD_GRAVITY,
};
use crate::env::{evaluate, make_policy, train_cem, CemConfig, EnvError, EpisodeConfig, LinearPolicy, PolicyKind, Task};
use crate::kinematics::{forward_kinematics, geometric_jacobian};
use crate::model::{default_armada_model, default_armada_pair, load_model, ModelError, RobotModel, Vector6};
use crate::retarget::{
    arm_csv, human_arm_length, map_human_to_robot, read_human_frames, retarget_trajectory, RetargetConfig, RetargetError,
};
use crate::rng::stream;
use crate::sim::{self, JointCommand, SimConfig, SimError, WorldState};

pub const TASKS: [&str; 3] = ["bump", "card", "card-lite"];
pub const POLICIES: [&str; 4] = ["random", "zero", "scripted", "linear"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("unknown {what} `{name}`")]
    UnknownName {
        what: &'static str,
        name: String,
        valid: Vec<&'static str>,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::UnknownName { .. } => "unknown_name",
            CliError::Io { .. } => "io",
            CliError::Override { .. } => "override",
            CliError::Model(_) => "model",
            CliError::Analysis(_) => "analysis",
            CliError::Calibration(_) => "calibration",
            CliError::Env(_) => "env",
            CliError::Retarget(_) => "retarget",
            CliError::Sim(_) => "sim",
        }
    }

    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::UnknownName { valid, .. } = self {
            err["valid"] = json!(valid);
        }
        json!({ "error": err })
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::UnknownName { .. } | CliError::Override { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "armada", version, about = "Simulation and analysis runners for the ARMADA arm")]
pub struct Cli {
    /// Robot model TOML; the built-in arm when omitted.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a flexed-to-extended swing under PD tracking and report EE speed.
    Speedtest(SpeedtestArgs),
    /// ISO 9283 repeatability report from measured positions.
    Repeatability(RepeatabilityArgs),
    /// Evaluate a policy on a manipulation task.
    Env(EnvArgs),
    /// Train a linear policy with the cross-entropy method.
    Train(TrainArgs),
    /// Retarget human elbow/wrist keypoints to joint trajectories.
    Retarget(RetargetArgs),
    /// Drag-free projectile range, and optionally the launch speed for a range.
    Ballistics(BallisticsArgs),
    /// Average impact force from the impulse-momentum balance.
    Impact(ImpactArgs),
    /// Check a current/torque calibration table and export plot data.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SpeedtestArgs {
    /// Output trajectory CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the simulator noise stream (unitless).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiplier on every joint velocity limit, in (0, 1] (unitless).
    #[arg(long, default_value_t = 1.0)]
    pub velocity_scale: f64,
    /// Sample interval of the trajectory and of the PD target updates [s].
    #[arg(long, default_value_t = 0.0005)]
    pub dt: f64,
    /// Time held at the final configuration after the swing [s].
    #[arg(long, default_value_t = 0.3)]
    pub hold: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RepeatabilityArgs {
    /// Input CSV `target_id,x_mm,y_mm,z_mm`.
    #[arg(long)]
    pub input: PathBuf,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Required number of rows per target (count).
    #[arg(long)]
    pub per_target: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EnvArgs {
    /// Task name: bump, card or card-lite.
    #[arg(long)]
    pub task: String,
    /// Policy name: random, zero, scripted or linear.
    #[arg(long)]
    pub policy: String,
    /// Parameters JSON written by `train` (linear policy only).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Number of episodes (count).
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    /// First episode seed; episode i uses seed + i (unitless).
    #[arg(long)]
    pub seed: u64,
    /// Bump scenario: 1 moves right to left, 2 left to right (unitless).
    #[arg(long)]
    pub scenario: Option<u8>,
    /// Config override `key=value`, dotted keys, JSON values (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Summary CSV `seed,success,steps,final_kp_err`; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-tick traces as JSON lines, all episodes in seed order.
    #[arg(long)]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Task name; only card-lite is supported.
    #[arg(long, default_value = "card-lite")]
    pub task: String,
    /// CEM iterations (count).
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    /// Candidates per iteration (count).
    #[arg(long, default_value_t = 64)]
    pub population: usize,
    /// Fraction of the population refit as elites, in (0, 1] (unitless).
    #[arg(long, default_value_t = 0.125)]
    pub elite_fraction: f64,
    /// Initial sampling std of every parameter (normalised action units).
    #[arg(long, default_value_t = 0.1)]
    pub initial_std: f64,
    /// Episodes per candidate (count).
    #[arg(long, default_value_t = 2)]
    pub episodes: usize,
    /// Seed of the sampler and the evaluation episodes (unitless).
    #[arg(long)]
    pub seed: u64,
    /// Config override `key=value`, dotted keys, JSON values (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Trained parameters JSON.
    #[arg(long)]
    pub out_params: Option<PathBuf>,
    /// Learning curve CSV `iteration,mean_return,best_return`.
    #[arg(long)]
    pub out_curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RetargetArgs {
    /// Keypoints as JSON lines, metres.
    #[arg(long)]
    pub input: PathBuf,
    /// Left-arm trajectory CSV `t,q1..q6` (s, rad).
    #[arg(long)]
    pub out_left: Option<PathBuf>,
    /// Right-arm trajectory CSV `t,q1..q6` (s, rad).
    #[arg(long)]
    pub out_right: Option<PathBuf>,
    /// Initial left-arm joints, six comma-separated values [rad].
    #[arg(long, value_delimiter = ',', num_args = 6, allow_hyphen_values = true)]
    pub q0_left: Option<Vec<f64>>,
    /// Initial right-arm joints, six comma-separated values [rad].
    #[arg(long, value_delimiter = ',', num_args = 6, allow_hyphen_values = true)]
    pub q0_right: Option<Vec<f64>>,
    /// Elbow task weight (unitless).
    #[arg(long, default_value_t = 0.3)]
    pub w_elbow: f64,
    /// Wrist task weight (unitless).
    #[arg(long, default_value_t = 1.0)]
    pub w_wrist: f64,
    /// Damping added to the least-squares normal equations (unitless).
    #[arg(long, default_value_t = 1e-4)]
    pub damping: f64,
    /// IK integration step [s].
    #[arg(long, default_value_t = 0.005)]
    pub dt: f64,
    /// Multiplier on joint velocity limits, in (0, 1] (unitless).
    #[arg(long, default_value_t = 1.0)]
    pub velocity_scale: f64,
    /// Per-frame convergence tolerance [m].
    #[arg(long, default_value_t = 5e-4)]
    pub tolerance: f64,
    /// IK iterations per frame (count).
    #[arg(long, default_value_t = 20)]
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BallisticsArgs {
    /// Launch speed [m/s].
    #[arg(long, allow_hyphen_values = true)]
    pub v: f64,
    /// Launch angle above horizontal [rad].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub angle: f64,
    /// Launch height above the ground [m].
    #[arg(long, default_value_t = 0.0)]
    pub h0: f64,
    /// Gravitational acceleration [m/s^2].
    #[arg(long, default_value_t = STANDARD_GRAVITY)]
    pub g: f64,
    /// Also solve for the launch speed reaching this range [m].
    #[arg(long)]
    pub target_range: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ImpactArgs {
    /// Effective striking mass [kg].
    #[arg(long)]
    pub mass: f64,
    /// Velocity change during the impact [m/s].
    #[arg(long, allow_hyphen_values = true)]
    pub dv: f64,
    /// Impact duration [s].
    #[arg(long)]
    pub duration: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Samples CSV `current_A,torque_Nm`.
    #[arg(long)]
    pub samples: PathBuf,
    /// Calibration id to replace; every actuator's table when omitted.
    #[arg(long)]
    pub calibration_id: Option<String>,
    /// Payload at the tool point for the current-ratio check [kg].
    #[arg(long, default_value_t = 2.5)]
    pub payload: f64,
    /// Plot data CSV `current_A,torque_Nm` over the sample span plus one span each side.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of plot points (count).
    #[arg(long, default_value_t = 101)]
    pub points: usize,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit code. Summaries go to `stdout`, errors to `stderr`.
pub fn run_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            let _ = writeln!(stderr, "{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(&cli) {
        Ok(Output::Summary(summary)) => {
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
            0
        }
        Ok(Output::Table(csv)) => {
            let _ = write!(stdout, "{csv}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json());
            e.exit_code()
        }
    }
}

/// What a subcommand prints: a JSON summary, or a CSV table when the table
/// was not sent to a file.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Summary(Value),
    Table(String),
}

impl From<Value> for Output {
    fn from(v: Value) -> Self {
        Output::Summary(v)
    }
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    let model = match &cli.model {
        Some(path) => load_model(&read_text(path)?)?,
        None => default_armada_model(),
    };
    match &cli.command {
        Command::Speedtest(a) => cmd_speedtest(&model, a).map(Output::from),
        Command::Repeatability(a) => cmd_repeatability(a),
        Command::Env(a) => cmd_env(&model, a),
        Command::Train(a) => cmd_train(&model, a).map(Output::from),
        Command::Retarget(a) => cmd_retarget(cli.model.as_deref(), a).map(Output::from),
        Command::Ballistics(a) => cmd_ballistics(a).map(Output::from),
        Command::Impact(a) => {
            let force = impact_force(a.mass, a.dv, a.duration)?;
            Ok(json!({ "force_N": force }).into())
        }
        Command::Calibrate(a) => cmd_calibrate(&model, a).map(Output::from),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    fs::File::open(path).map(BufReader::new).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_task(name: &str) -> Result<Task, CliError> {
    name.parse().map_err(|_| CliError::UnknownName {
        what: "task",
        name: name.to_string(),
        valid: TASKS.to_vec(),
    })
}

/// Applies `key=value` overrides to any serialisable config. Keys are dotted
/// paths into the JSON form; values are parsed as JSON, else taken as strings.
pub fn apply_overrides<T>(config: &T, overrides: &[String]) -> Result<T, CliError>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(config).expect("config serialises");
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| CliError::Override {
            key: item.clone(),
            message: "expected key=value".into(),
        })?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut value;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| CliError::Override {
                    key: key.to_string(),
                    message: format!("no field `{part}`"),
                })?;
        }
        *slot = parsed;
    }
    serde_json::from_value(value).map_err(|e| CliError::Override {
        key: overrides.join(" "),
        message: e.to_string(),
    })
}

/// Result of [`speed_test`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedTest {
    /// Sample interval, s.
    pub dt: f64,
    /// Swing duration before the hold, s.
    pub swing_duration: f64,
    pub times: Vec<f64>,
    pub q: Vec<Vector6>,
    pub qdot: Vec<Vector6>,
    pub ee: Vec<Vector3<f64>>,
    pub metrics: SpeedMetrics,
    /// `‖J q̇‖` (linear rows) at the sample of maximum speed, m/s.
    pub jacobian_speed: f64,
}

impl SpeedTest {
    /// `t,q1..q6,qd1..qd6,ee_x,ee_y,ee_z`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,q1,q2,q3,q4,q5,q6,qd1,qd2,qd3,qd4,qd5,qd6,ee_x,ee_y,ee_z\n");
        for k in 0..self.times.len() {
            s += &format!("{:.6}", self.times[k]);
            for v in self.q[k].iter().chain(self.qdot[k].iter()) {
                s += &format!(",{v:.9}");
            }
            for v in self.ee[k].iter() {
                s += &format!(",{v:.9}");
            }
            s.push('\n');
        }
        s
    }
}

/// Folded start of the swing.
pub fn speedtest_start() -> Vector6 {
    Vector6::new(0.9, 0.0, -0.3, -2.5, 0.0, 0.0)
}

/// Extended end of the swing.
pub fn speedtest_end() -> Vector6 {
    Vector6::new(0.0, 0.0, 1.2, 0.0, 0.0, 0.0)
}

fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Minimum-jerk joint interpolation between [`speedtest_start`] and
/// [`speedtest_end`], tracked by a stiff PD servo in simulation. The swing
/// lasts as long as the slowest joint needs at `velocity_scale` times its
/// velocity limit (peak min-jerk speed is 1.875 Δq / T), rounded up to whole
/// samples, followed by a hold.
pub fn speed_test(model: &RobotModel, velocity_scale: f64, dt: f64, hold: f64, seed: u64) -> Result<SpeedTest, CliError> {
    if !(velocity_scale > 0.0 && velocity_scale <= 1.0) {
        return Err(CliError::Usage("velocity-scale must be in (0, 1]".into()));
    }
    if !(dt > 0.0 && hold >= 0.0) {
        return Err(CliError::Usage("dt must be > 0 and hold >= 0".into()));
    }
    let a = model.clamp_to_limits(&speedtest_start());
    let b = model.clamp_to_limits(&speedtest_end());
    let limits = model.velocity_limits();
    let t_min = (0..6)
        .map(|j| 1.875 * (b[j] - a[j]).abs() / (limits[j] * velocity_scale))
        .fold(0.0, f64::max);
    let swing_steps = (t_min / dt - 1e-9).ceil().max(1.0) as usize;
    let swing = swing_steps as f64 * dt;
    let steps = swing_steps + (hold / dt).round() as usize;

    let defaults = SimConfig::default();
    let h = defaults.dt / defaults.integration_substeps as f64;
    let config = SimConfig {
        dt,
        integration_substeps: (dt / h).round().max(1.0) as usize,
        contacts_enabled: false,
        ..defaults
    };
    let gains = PdGains {
        kp: Vector6::new(150.0, 150.0, 150.0, 100.0, 30.0, 20.0),
        kd: Vector6::new(4.0, 4.0, 4.0, 3.0, 0.5, 0.3),
    };
    let mut world = WorldState::arm_only(a);
    let mut rng = stream(seed, 1);
    let mut out = SpeedTest {
        dt,
        swing_duration: swing,
        times: Vec::with_capacity(steps + 1),
        q: Vec::with_capacity(steps + 1),
        qdot: Vec::with_capacity(steps + 1),
        ee: Vec::with_capacity(steps + 1),
        metrics: SpeedMetrics {
            max_speed: 0.0,
            mean_speed: 0.0,
            argmax_time: 0.0,
        },
        jacobian_speed: 0.0,
    };
    let mut record = |world: &WorldState, k: usize| {
        out.times.push(k as f64 * dt);
        out.q.push(world.arm.q);
        out.qdot.push(world.arm.qdot);
        out.ee.push(forward_kinematics(model, &world.arm.q).ee_position());
    };
    record(&world, 0);
    for k in 1..=steps {
        let target = a + (b - a) * min_jerk(k as f64 * dt / swing);
        sim::step(&mut world, model, &JointCommand::Pd { target, gains }, &config, &mut rng)?;
        record(&world, k);
    }
    out.metrics = speed_metrics(&out.ee, dt)?;
    let k = (out.metrics.argmax_time / dt).round() as usize;
    let j = geometric_jacobian(model, &out.q[k]);
    out.jacobian_speed = (j * out.qdot[k]).fixed_rows::<3>(0).norm();
    Ok(out)
}

fn cmd_speedtest(model: &RobotModel, a: &SpeedtestArgs) -> Result<Value, CliError> {
    let test = speed_test(model, a.velocity_scale, a.dt, a.hold, a.seed)?;
    if let Some(path) = &a.out {
        write_file(path, &test.to_csv())?;
    }
    log::info!("speedtest: max EE speed {:.4} m/s", test.metrics.max_speed);
    Ok(json!({
        "rows": test.times.len(),
        "dt_s": test.dt,
        "swing_duration_s": test.swing_duration,
        "max_speed_mps": test.metrics.max_speed,
        "mean_speed_mps": test.metrics.mean_speed,
        "argmax_time_s": test.metrics.argmax_time,
        "jacobian_speed_mps": test.jacobian_speed,
    }))
}

fn cmd_repeatability(a: &RepeatabilityArgs) -> Result<Output, CliError> {
    let groups = read_repeatability_csv(open(&a.input)?, a.per_target)?;
    let report = RepeatabilityReport::from_groups(&groups)?;
    let csv = report.to_csv();
    let Some(path) = &a.out else {
        return Ok(Output::Table(csv));
    };
    write_file(path, &csv)?;
    Ok(Output::Summary(json!({
        "targets": report.rows.len(),
        "average_mu_mm": report.average_mu,
        "average_sigma_mm": report.average_sigma,
        "average_r_mm": report.average_r,
    })))
}

fn episode_config(task: &str, seed: u64, overrides: &[String]) -> Result<EpisodeConfig, CliError> {
    let base = EpisodeConfig {
        seed,
        ..EpisodeConfig::new(parse_task(task)?)
    };
    let config = apply_overrides(&base, overrides)?;
    config.validate()?;
    Ok(config)
}

fn cmd_env(model: &RobotModel, a: &EnvArgs) -> Result<Output, CliError> {
    let mut config = episode_config(&a.task, a.seed, &a.overrides)?;
    if let Some(s) = a.scenario {
        config.scenario = s;
        config.validate()?;
    }
    let kind = match a.policy.as_str() {
        "linear" => {
            let path = a
                .params
                .as_ref()
                .ok_or_else(|| CliError::Usage("policy `linear` needs --params".into()))?;
            let policy: LinearPolicy = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            PolicyKind::Linear(policy)
        }
        name => name.parse().map_err(|_| CliError::UnknownName {
            what: "policy",
            name: name.to_string(),
            valid: POLICIES.to_vec(),
        })?,
    };
    if a.episodes == 0 {
        return Err(CliError::Usage("episodes must be >= 1".into()));
    }
    let eval = evaluate(&config, model, a.episodes, |c| make_policy(&kind, c, model))?;
    if let Some(path) = &a.traces {
        let mut text = String::new();
        for i in 0..a.episodes as u64 {
            let cfg = EpisodeConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            let mut policy = make_policy(&kind, &cfg, model);
            text += &crate::env::rollout(&cfg, model, policy.as_mut())?.to_jsonl();
        }
        write_file(path, &text)?;
    }
    let csv = eval.to_csv();
    let Some(path) = &a.out else {
        return Ok(Output::Table(csv));
    };
    write_file(path, &csv)?;
    Ok(Output::Summary(json!({
        "task": config.task.to_string(),
        "policy": a.policy,
        "episodes": a.episodes,
        "success_rate": eval.success_rate(),
        "mean_return": eval.mean_return(),
    })))
}

fn cmd_train(model: &RobotModel, a: &TrainArgs) -> Result<Value, CliError> {
    let config = episode_config(&a.task, a.seed, &a.overrides)?;
    let cem = CemConfig {
        iterations: a.iterations,
        population: a.population,
        elite_fraction: a.elite_fraction,
        initial_std: a.initial_std,
        episodes: a.episodes,
        seed: a.seed,
        ..CemConfig::default()
    };
    let result = train_cem(&config, model, &cem)?;
    if let Some(path) = &a.out_params {
        write_file(path, &serde_json::to_string(&result.policy).expect("policy serialises"))?;
    }
    if let Some(path) = &a.out_curve {
        write_file(path, &result.curve_csv())?;
    }
    let first = result.curve[0];
    let last = *result.curve.last().expect("at least one iteration");
    Ok(json!({
        "iterations": result.curve.len(),
        "initial_mean_return": first,
        "final_mean_return": last,
        "relative_improvement": (last - first) / first.abs().max(1e-12),
        "warnings": result.warnings,
    }))
}

/// Pose both arms start from when no `--q0-*` is given: upper arm hanging,
/// forearm forward.
pub fn retarget_rest_pose() -> Vector6 {
    Vector6::new(0.0, 0.0, 1.2, -1.4, 0.0, 0.0)
}

fn cmd_retarget(model_path: Option<&Path>, a: &RetargetArgs) -> Result<Value, CliError> {
    let (left, right) = match model_path {
        // a custom model is mirrored the same way as the built-in pair
        Some(path) => {
            let m = load_model(&read_text(path)?)?;
            let (dl, dr) = default_armada_pair();
            let mut l = m.clone();
            let mut r = m;
            l.base.xyz[1] = dl.base.xyz[1];
            r.base.xyz[1] = dr.base.xyz[1];
            (l, r)
        }
        None => default_armada_pair(),
    };
    let config = RetargetConfig {
        w_elbow: a.w_elbow,
        w_wrist: a.w_wrist,
        damping: a.damping,
        dt: a.dt,
        velocity_scale: a.velocity_scale,
        tolerance: a.tolerance,
        max_iterations: a.max_iterations,
    };
    let raw = read_human_frames(open(&a.input)?)?;
    let length = human_arm_length(&raw).ok_or_else(|| CliError::Usage("keypoint file has no frames".into()))?;
    let frames = raw
        .iter()
        .map(|f| map_human_to_robot(f, length, &left, &right))
        .collect::<Result<Vec<_>, _>>()?;
    let q0 = |v: &Option<Vec<f64>>| v.as_ref().map_or_else(retarget_rest_pose, |v| Vector6::from_column_slice(v));
    let samples = retarget_trajectory(&left, &right, &frames, &config, [q0(&a.q0_left), q0(&a.q0_right)])?;
    if let Some(path) = &a.out_left {
        write_file(path, &arm_csv(&samples, true))?;
    }
    if let Some(path) = &a.out_right {
        write_file(path, &arm_csv(&samples, false))?;
    }
    let worst = |f: fn(&crate::retarget::RetargetSample) -> f64| samples.iter().map(f).fold(0.0, f64::max);
    Ok(json!({
        "frames": samples.len(),
        "human_arm_length_m": length,
        "max_wrist_error_m": worst(|s| s.left.wrist_error.max(s.right.wrist_error)),
        "max_elbow_error_m": worst(|s| s.left.elbow_error.max(s.right.elbow_error)),
    }))
}

fn cmd_ballistics(a: &BallisticsArgs) -> Result<Value, CliError> {
    let r = ballistic_range(a.v, a.angle, a.h0, a.g)?;
    let mut out = json!({ "range_m": r.range, "flight_time_s": r.flight_time });
    if let Some(target) = a.target_range {
        out["required_speed_mps"] = json!(required_launch_speed(target, a.angle, a.h0, a.g)?);
    }
    Ok(out)
}

fn cmd_calibrate(model: &RobotModel, a: &CalibrateArgs) -> Result<Value, CliError> {
    let table = CalibrationTable::from_csv(open(&a.samples)?)?;
    if !(a.payload >= 0.0) {
        return Err(CliError::Usage("payload must be >= 0".into()));
    }
    if a.points < 2 {
        return Err(CliError::Usage("points must be >= 2".into()));
    }
    let mut model = model.clone();
    let ids: Vec<String> = match &a.calibration_id {
        Some(id) => {
            if !model.actuators.iter().any(|x| &x.calibration_id == id) {
                let mut valid: Vec<String> = model.actuators.iter().map(|x| x.calibration_id.clone()).collect();
                valid.dedup();
                return Err(CliError::Usage(format!(
                    "no actuator uses calibration `{id}`; valid: {}",
                    valid.join(", ")
                )));
            }
            vec![id.clone()]
        }
        None => model.actuators.iter().map(|x| x.calibration_id.clone()).collect(),
    };
    for id in &ids {
        model.calibrations.insert(id.clone(), table.clone());
    }
    let samples = table.samples();
    let (lo, hi) = (samples[0].0, samples[samples.len() - 1].0);
    let span = hi - lo;
    if let Some(path) = &a.out {
        let mut s = String::from("current_A,torque_Nm\n");
        for k in 0..a.points {
            let i = (lo - span) + 3.0 * span * k as f64 / (a.points - 1) as f64;
            s += &format!("{i:.9},{:.9}\n", torque_from_current(&table, i));
        }
        write_file(path, &s)?;
    }
    let slopes: Vec<f64> = samples.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    let tau = gravity_torques(&model, &lifting_posture(), a.payload, SimConfig::default().gravity);
    let ratios = current_ratios(&model, &tau);
    Ok(json!({
        "samples": samples.len(),
        "current_range_A": [lo, hi],
        "slopes_Nm_per_A": slopes,
        "payload_kg": a.payload,
        "current_ratios": ratios.as_slice(),
        "within_nominal": ratios.iter().all(|r| *r <= 1.0),
    }))
}
