use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifacts::{LoadedNet, PolicyBundle};
use super::HarnessError;
use crate::commgraph::build_graph;
use crate::diffcore::Array;
use crate::env_gather::{GridWorld, ReplayRecord, TaskConfig, ACTION_COUNT, NOOP};
use crate::policy::{episode_rng, run_episode, ActorCritic, Controller, EpisodeStats, PolicyError, QLearner};

/// Policy under evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalPolicy {
    /// A trained policy described by a bundle file.
    Bundle(PathBuf),
    /// Uniform over all actions.
    Random,
    /// Always the no-op action.
    Noop,
}

impl EvalPolicy {
    /// `random`, `noop`, or a path to a bundle file.
    pub fn parse(s: &str) -> Self {
        match s {
            "random" => EvalPolicy::Random,
            "noop" => EvalPolicy::Noop,
            path => EvalPolicy::Bundle(PathBuf::from(path)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    /// Sum of every agent's reward in an episode, averaged over episodes.
    pub mean_return: f64,
    pub mean_end_steps: f64,
    pub food_eaten_frac: f64,
}

impl EvalReport {
    fn from_stats(stats: &[EpisodeStats]) -> Self {
        let n = stats.len().max(1) as f64;
        Self {
            episodes: stats.len(),
            mean_return: stats.iter().map(|s| s.team_return).sum::<f64>() / n,
            mean_end_steps: stats.iter().map(|s| s.end_steps as f64).sum::<f64>() / n,
            food_eaten_frac: stats.iter().map(|s| s.food_eaten_frac).sum::<f64>() / n,
        }
    }
}

struct Sampler<'a>(&'a ActorCritic);

impl Controller for Sampler<'_> {
    fn decide(&mut self, _: &[usize], inputs: &Array, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, PolicyError> {
        Ok(self.0.act(inputs, rng)?.into_iter().map(|(a, _)| a).collect())
    }
}

struct Greedy<'a>(&'a QLearner);

impl Controller for Greedy<'_> {
    fn decide(&mut self, _: &[usize], inputs: &Array, _: &mut ChaCha8Rng) -> Result<Vec<usize>, PolicyError> {
        self.0.greedy(inputs)
    }
}

/// Plays `episodes` episodes of `task` with `policy`. Episode `k` uses the
/// generator `episode_rng(seed, 0, k)`, which also draws the task seed, so
/// results depend only on `(policy, task, episodes, seed)`. Actor-critic
/// policies sample their actions; Q-networks act greedily.
pub fn evaluate(policy: &EvalPolicy, task: &TaskConfig, episodes: usize, seed: u64) -> Result<EvalReport, HarnessError> {
    evaluate_policy(policy, task, episodes, seed, None)
}

/// [`evaluate`], optionally recording every step of every episode.
pub fn evaluate_policy(
    policy: &EvalPolicy,
    task: &TaskConfig,
    episodes: usize,
    seed: u64,
    mut replay: Option<&mut Vec<Vec<ReplayRecord>>>,
) -> Result<EvalReport, HarnessError> {
    task.validate()?;
    let mut stats = Vec::with_capacity(episodes);
    let mut loaded = match policy {
        EvalPolicy::Bundle(path) => Some(PolicyBundle::load(path)?.open(path)?),
        _ => None,
    };
    if let Some(lp) = &loaded {
        lp.featurizer.check_task(task).map_err(|e| HarnessError::config(e.to_string()))?;
    }
    for k in 0..episodes {
        let mut rng = episode_rng(seed, 0, k);
        let episode_task = task.with_seed(rng.random());
        let mut records = Vec::new();
        let rec = replay.is_some().then_some(&mut records);
        let s = match (&mut loaded, policy) {
            (Some(lp), _) => {
                let mut controller: Box<dyn Controller + '_> = match &lp.net {
                    LoadedNet::ActorCritic(n) => Box::new(Sampler(n)),
                    LoadedNet::QNetwork(q) => Box::new(Greedy(q)),
                };
                run_episode(&episode_task, &lp.featurizer, lp.source.as_mut(), controller.as_mut(), &mut rng, rec)?
            }
            (None, EvalPolicy::Noop) => play_baseline(&episode_task, |_| NOOP, rec)?,
            (None, _) => play_baseline(&episode_task, |_| rng.random_range(0..ACTION_COUNT), rec)?,
        };
        stats.push(s);
        if let Some(out) = replay.as_deref_mut() {
            out.push(records);
        }
    }
    Ok(EvalReport::from_stats(&stats))
}

fn play_baseline(
    task: &TaskConfig,
    mut action: impl FnMut(usize) -> usize,
    mut replay: Option<&mut Vec<ReplayRecord>>,
) -> Result<EpisodeStats, HarnessError> {
    let mut world = GridWorld::new(task.clone())?;
    let mut team_return = 0.0;
    while !world.done() {
        let ids = world.alive_ids();
        if ids.is_empty() {
            break;
        }
        let joint: Vec<(usize, usize)> = ids.iter().map(|&i| (i, action(i))).collect();
        let edges = match replay {
            Some(_) => {
                let positions = ids.iter().map(|&i| world.position(i)).collect::<Result<Vec<_>, _>>()?;
                build_graph(&positions, &ids).map_err(PolicyError::from)?.edges()
            }
            None => Vec::new(),
        };
        let result = world.step(&joint)?;
        team_return += result.rewards.iter().sum::<f64>();
        if let Some(out) = replay.as_deref_mut() {
            out.push(ReplayRecord::capture(&world, &joint, &result, edges));
        }
    }
    Ok(EpisodeStats {
        team_return,
        end_steps: world.t(),
        food_eaten_frac: 1.0 - world.food_remaining() as f64 / task.n_food as f64,
    })
}

/// Recomputes the evaluation metrics from recorded episodes alone.
pub fn metrics_from_replay(episodes: &[Vec<ReplayRecord>]) -> Result<EvalReport, HarnessError> {
    let stats = episodes
        .iter()
        .enumerate()
        .map(|(k, records)| {
            let last = records
                .last()
                .ok_or_else(|| HarnessError::Io(format!("replay episode {k} is empty")))?;
            let n_food = last.food_positions.len();
            Ok(EpisodeStats {
                team_return: records.iter().map(ReplayRecord::team_reward).sum(),
                end_steps: last.t,
                food_eaten_frac: if n_food == 0 { 0.0 } else { 1.0 - last.food_remaining as f64 / n_food as f64 },
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(EvalReport::from_stats(&stats))
}
