use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::{rollout, with_pool};
use super::{EnvError, EpisodeConfig, LinearPolicy, Task};
use crate::model::RobotModel;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub iterations: usize,
    pub population: usize,
    pub elite_fraction: f64,
    pub initial_std: f64,
    /// Floor on the sampling std.
    pub min_std: f64,
    /// Episodes per candidate; the same episode seeds are reused every iteration.
    pub episodes: usize,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            population: 64,
            elite_fraction: 0.125,
            initial_std: 0.1,
            min_std: 0.005,
            episodes: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CemResult {
    pub policy: LinearPolicy,
    /// Mean return of the sampled population at each iteration.
    pub curve: Vec<f64>,
    /// Return of the best candidate at each iteration.
    pub best: Vec<f64>,
    pub warnings: Vec<String>,
}

impl CemResult {
    /// `iteration,mean_return,best_return`.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("iteration,mean_return,best_return\n");
        for (i, (m, b)) in self.curve.iter().zip(&self.best).enumerate() {
            s += &format!("{i},{m:.6},{b:.6}\n");
        }
        s
    }
}

/// Cross-entropy search over [`LinearPolicy`] parameters on card-lite.
pub fn train_cem(task: &EpisodeConfig, model: &RobotModel, cem: &CemConfig) -> Result<CemResult, EnvError> {
    if task.task != Task::CardLite {
        return Err(EnvError::UnsupportedTask(task.task));
    }
    task.validate()?;
    if cem.iterations == 0 || cem.population == 0 || cem.episodes == 0 {
        return Err(EnvError::InvalidConfig("iterations, population and episodes must be >= 1".into()));
    }
    if !(cem.elite_fraction > 0.0 && cem.elite_fraction <= 1.0) {
        return Err(EnvError::InvalidConfig("elite_fraction must be in (0, 1]".into()));
    }
    let mut warnings = Vec::new();
    if cem.population == 1 {
        let w = "population 1: the single sample is the elite set; the search degenerates to a random walk".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let n = LinearPolicy::PARAMS;
    let n_elite = ((cem.population as f64 * cem.elite_fraction).round() as usize).clamp(1, cem.population);
    let mut mean = vec![0.0; n];
    let mut std = vec![cem.initial_std; n];
    let mut curve = Vec::with_capacity(cem.iterations);
    let mut best_curve = Vec::with_capacity(cem.iterations);

    let score = |params: &[f64]| -> Result<f64, EnvError> {
        let mut total = 0.0;
        for e in 0..cem.episodes as u64 {
            let cfg = EpisodeConfig {
                seed: cem.seed.wrapping_mul(1_000_003).wrapping_add(e),
                ..task.clone()
            };
            let mut policy = LinearPolicy::from_params(params, task.bounds);
            total += rollout(&cfg, model, &mut policy)?.total_return();
        }
        Ok(total / cem.episodes as f64)
    };

    for it in 0..cem.iterations {
        let mut rng = stream(cem.seed, 1_000 + it as u64);
        let candidates: Vec<Vec<f64>> = (0..cem.population)
            .map(|_| {
                (0..n)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mean[k] + std[k] * z
                    })
                    .collect()
            })
            .collect();
        let scores: Vec<f64> = with_pool(|| candidates.par_iter().map(|c| score(c)).collect::<Result<Vec<_>, _>>())?;
        curve.push(scores.iter().sum::<f64>() / scores.len() as f64);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        // stable: ties keep population order
        order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
        best_curve.push(scores[order[0]]);
        let elite = &order[..n_elite];
        for k in 0..n {
            let m = elite.iter().map(|&i| candidates[i][k]).sum::<f64>() / n_elite as f64;
            let var = elite.iter().map(|&i| (candidates[i][k] - m).powi(2)).sum::<f64>() / n_elite as f64;
            mean[k] = m;
            std[k] = var.sqrt().max(cem.min_std);
        }
        log::info!("cem iteration {it}: mean {:.4} best {:.4}", curve[it], best_curve[it]);
    }
    Ok(CemResult {
        policy: LinearPolicy::from_params(&mean, task.bounds),
        curve,
        best: best_curve,
        warnings,
    })
}
