use rayon::prelude::*;
use serde::Serialize;

use super::{Env, EnvError, EpisodeConfig, Policy, StepInfo};
use crate::model::RobotModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub observation: Vec<f64>,
    /// Action as applied, after clamping.
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub initial_observation: Vec<f64>,
    pub records: Vec<TraceRecord>,
}

impl EpisodeTrace {
    pub fn total_return(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn success(&self) -> bool {
        self.records.last().is_some_and(|r| r.info.success)
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            seed: self.seed,
            success: self.success(),
            steps: self.records.len(),
            final_kp_err: self.records.last().map_or(f64::NAN, |r| r.info.keypoint_error),
            total_return: self.total_return(),
        }
    }

    /// One JSON object per policy tick.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s += &serde_json::to_string(r).expect("trace records serialise");
            s.push('\n');
        }
        s
    }
}

pub fn rollout(config: &EpisodeConfig, model: &RobotModel, policy: &mut dyn Policy) -> Result<EpisodeTrace, EnvError> {
    let (mut env, mut obs) = Env::reset_with_model(config, model.clone())?;
    policy.reset(&obs);
    let initial_observation = obs.flatten();
    let mut records = Vec::with_capacity(config.max_steps);
    loop {
        let action = policy.act(&obs);
        let out = env.step(&action)?;
        records.push(TraceRecord {
            step: records.len(),
            observation: out.observation.flatten(),
            action: out.observation.prev_action.to_vec(),
            reward: out.reward,
            done: out.done,
            info: out.info,
        });
        obs = out.observation;
        if out.done {
            break;
        }
    }
    Ok(EpisodeTrace {
        seed: config.seed,
        initial_observation,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub final_kp_err: f64,
    pub total_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeSummary>,
}

impl Evaluation {
    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }

    pub fn mean_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.total_return).sum::<f64>() / self.episodes.len().max(1) as f64
    }

    /// `seed,success,steps,final_kp_err`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,success,steps,final_kp_err\n");
        for e in &self.episodes {
            s += &format!("{},{},{},{:.6}\n", e.seed, e.success as u8, e.steps, e.final_kp_err);
        }
        s
    }
}

/// Worker count: `ARMADA_SIM_THREADS` if set to a positive integer, else rayon's default.
pub fn sim_threads() -> usize {
    std::env::var("ARMADA_SIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

pub(crate) fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(sim_threads()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Runs episodes with seeds `config.seed + i` for `i in 0..episodes`, in
/// parallel; results are ordered by seed.
pub fn evaluate<F>(config: &EpisodeConfig, model: &RobotModel, episodes: usize, make: F) -> Result<Evaluation, EnvError>
where
    F: Fn(&EpisodeConfig) -> Box<dyn Policy> + Sync,
{
    let results: Result<Vec<EpisodeSummary>, EnvError> = with_pool(|| {
        (0..episodes as u64)
            .into_par_iter()
            .map(|i| {
                let cfg = EpisodeConfig {
                    seed: config.seed.wrapping_add(i),
                    ..config.clone()
                };
                let mut policy = make(&cfg);
                rollout(&cfg, model, policy.as_mut()).map(|t| t.summary())
            })
            .collect()
    });
    Ok(Evaluation { episodes: results? })
}
