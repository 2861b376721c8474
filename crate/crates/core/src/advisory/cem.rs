//! Cross-entropy method: sample parameter vectors around a Gaussian,
//! keep the elite fraction, refit, repeat.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AdviceSettings, AdvisoryError, Policy, PolicyKind};
use crate::driver::{DriverContext, DriverModel, DriverParams, DriverRegistry};
use crate::episode::{run_headless, EpisodeConfig};
use crate::ring::{IdmParams, InitialCondition, RingConfig};
use crate::advisory::ActionBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemParams {
    pub iterations: usize,
    pub population: usize,
    pub elite_frac: f64,
    /// Initial sampling standard deviation, per parameter.
    pub init_std: f64,
    /// Added to the refitted std each iteration to delay collapse.
    pub extra_std: f64,
    pub seed: u64,
}

impl Default for CemParams {
    fn default() -> Self {
        Self { iterations: 20, population: 24, elite_frac: 0.25, init_std: 0.05, extra_std: 0.0, seed: 0 }
    }
}

impl CemParams {
    pub fn validate(&self) -> Result<(), AdvisoryError> {
        if self.population < 4 {
            return Err(AdvisoryError::InvalidTrainer(format!("population {} < 4", self.population)));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac < 1.0) {
            return Err(AdvisoryError::InvalidTrainer(format!("elite_frac {} not in (0, 1)", self.elite_frac)));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0 && self.extra_std.is_finite() && self.extra_std >= 0.0) {
            return Err(AdvisoryError::InvalidTrainer("standard deviations must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn n_elite(&self) -> usize {
        ((self.elite_frac * self.population as f64).round() as usize).clamp(1, self.population)
    }
}

/// Environment a candidate is scored in: perfectly compliant (or other)
/// driver, fixed seeds, reward = mean post-warmup speed averaged over seeds.
#[derive(Debug, Clone)]
pub struct TrainingEnv {
    pub ring: RingConfig,
    pub idm: IdmParams,
    pub initial: InitialCondition,
    pub driver: DriverParams,
    pub advice: AdviceSettings,
    pub eval_seeds: Vec<u64>,
    /// Subtracted per collision-guard intervention per post-warmup tick.
    /// Zero scores plain mean speed; a positive value stops the search from
    /// favouring policies that ride the guard.
    pub collision_penalty: f64,
}

impl TrainingEnv {
    fn driver(&self) -> Result<Box<dyn DriverModel>, AdvisoryError> {
        DriverRegistry::builtin()
            .build(&self.driver, &DriverContext { dt_s: self.ring.dt_s, bounds: ActionBounds::for_idm(&self.idm) })
            .map_err(|e| AdvisoryError::InvalidTrainer(e.to_string()))
    }

    /// Mean reward of `policy` over the evaluation seeds; failures and
    /// non-finite rewards score `-inf`.
    pub fn score(&self, policy: &dyn Policy, driver: &dyn DriverModel) -> f64 {
        let mut total = 0.0;
        for &seed in &self.eval_seeds {
            let ring = RingConfig { seed, ..self.ring.clone() };
            let config = EpisodeConfig::new(ring, self.idm, self.initial, self.advice);
            let candidate = match policy.with_params(&policy.params()) {
                Ok(p) => p,
                Err(_) => return f64::NEG_INFINITY,
            };
            let window = (self.ring.horizon_steps + 1).saturating_sub(self.ring.warmup_steps).max(1) as f64;
            let reward = run_headless(config, Some(candidate), Some(driver), false).ok().and_then(|ep| {
                let r = ep.reward().ok()?;
                Some(r - self.collision_penalty * ep.window_collisions() as f64 / window)
            });
            match reward {
                Some(r) if r.is_finite() => total += r,
                _ => return f64::NEG_INFINITY,
            }
        }
        total / self.eval_seeds.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub reward_mean: f64,
    pub reward_min: f64,
    pub reward_max: f64,
    pub elite_mean_reward: f64,
    pub best_reward: f64,
    pub mean_std: f64,
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub policy: PolicyKind,
    pub params: Vec<f64>,
    pub best_reward: Option<f64>,
    pub stats: Vec<IterationStats>,
}

/// Mean that is exact when every value is equal.
fn stable_mean(values: &[f64]) -> f64 {
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

pub fn train_cem(env: &TrainingEnv, template: &dyn Policy, params: &CemParams) -> Result<CemResult, AdvisoryError> {
    params.validate()?;
    let driver = env.driver()?;
    let mut mean = template.params();
    let dim = mean.len();
    let mut std = vec![params.init_std; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stats = Vec::with_capacity(params.iterations);
    let n_elite = params.n_elite();

    for iteration in 0..params.iterations {
        // candidate 0 is the current mean itself
        let mut candidates = vec![mean.clone()];
        for _ in 0..params.population {
            candidates.push(
                (0..dim)
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mean[d] + std[d] * z
                    })
                    .collect(),
            );
        }
        let rewards: Vec<f64> = candidates
            .par_iter()
            .map(|c| match template.with_params(c) {
                Ok(p) => env.score(p.as_ref(), driver.as_ref()),
                Err(_) => f64::NEG_INFINITY,
            })
            .collect();

        for (c, &r) in candidates.iter().zip(&rewards) {
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, c.clone()));
            }
        }

        // elites come from the sampled population only
        let mut order: Vec<usize> = (1..candidates.len()).collect();
        order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
        let elite: Vec<&Vec<f64>> = order[..n_elite].iter().map(|&i| &candidates[i]).collect();
        for d in 0..dim {
            let column: Vec<f64> = elite.iter().map(|c| c[d]).collect();
            let m = stable_mean(&column);
            let var = column.iter().map(|x| (x - m).powi(2)).sum::<f64>() / column.len() as f64;
            mean[d] = m;
            std[d] = var.sqrt() + params.extra_std;
        }

        let sampled = &rewards[1..];
        let finite: Vec<f64> = sampled.iter().copied().filter(|r| r.is_finite()).collect();
        let elite_rewards: Vec<f64> = order[..n_elite].iter().map(|&i| rewards[i]).collect();
        let stat = IterationStats {
            iteration,
            reward_mean: if finite.is_empty() { f64::NEG_INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 },
            reward_min: sampled.iter().copied().fold(f64::INFINITY, f64::min),
            reward_max: sampled.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            elite_mean_reward: elite_rewards.iter().sum::<f64>() / n_elite as f64,
            best_reward: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0),
            mean_std: std.iter().sum::<f64>() / dim.max(1) as f64,
        };
        log::debug!("cem iteration {iteration}: best {:.4} elite {:.4}", stat.best_reward, stat.elite_mean_reward);
        stats.push(stat);
    }

    let (best_reward, best_params) = match best {
        Some((r, p)) => (Some(r), p),
        None => (None, mean.clone()),
    };
    let policy = template.with_params(&best_params)?.kind();
    Ok(CemResult { policy, params: best_params, best_reward, stats })
}

/// Elite-mean update in isolation, exposed for testing the refit step.
pub fn elite_mean(candidates: &[Vec<f64>]) -> Vec<f64> {
    let dim = candidates.first().map_or(0, Vec::len);
    (0..dim)
        .map(|d| stable_mean(&candidates.iter().map(|c| c[d]).collect::<Vec<_>>()))
        .collect()
}
