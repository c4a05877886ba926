//! Episode driver and the per-agent trajectory buffer.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::advantage::{compute_gae, compute_returns};
use super::latent::LatentSource;
use super::objective::PpoBatch;
use super::PolicyError;
use crate::commgraph::build_graph;
use crate::diffcore::Array;
use crate::env_gather::{observe_into, GridWorld, ReplayRecord, StepResult, TaskConfig};
use crate::nvif::ObsCompressor;

/// Turns raw local views into compressed features.
#[derive(Clone, Debug)]
pub struct Featurizer {
    pub compressor: ObsCompressor,
}

impl Featurizer {
    pub fn new(compressor: ObsCompressor) -> Self {
        Self { compressor }
    }

    pub fn width(&self) -> usize {
        self.compressor.d_o
    }

    pub fn check_task(&self, task: &TaskConfig) -> Result<(), PolicyError> {
        if task.obs_len() != self.compressor.obs_len {
            return Err(PolicyError::Config(format!(
                "task observations are {} wide, compressor was fitted on {}",
                task.obs_len(),
                self.compressor.obs_len
            )));
        }
        Ok(())
    }

    /// Compressed features of `ids`, one row each.
    pub fn features(&self, world: &GridWorld, ids: &[usize]) -> Result<Array, PolicyError> {
        let len = self.compressor.obs_len;
        let mut raw = vec![0.0; ids.len() * len];
        for (r, &id) in ids.iter().enumerate() {
            observe_into(world, id, &mut raw[r * len..(r + 1) * len])?;
        }
        Ok(self.compressor.compress(&Array::matrix(ids.len(), len, raw))?)
    }
}

/// Decision-making side of an episode.
pub trait Controller {
    /// One action per row of `inputs`; rows follow `ids`.
    fn decide(&mut self, ids: &[usize], inputs: &Array, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, PolicyError>;

    /// Sees the outcome of the actions chosen by the last [`Self::decide`].
    fn feedback(&mut self, _ids: &[usize], _result: &StepResult) -> Result<(), PolicyError> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Sum of all agents' rewards over the episode.
    pub team_return: f64,
    pub end_steps: usize,
    pub food_eaten_frac: f64,
}

/// Plays one episode of `task`. Each step: compress observations, query
/// the latent source, concatenate, decide, step the world.
pub fn run_episode(
    task: &TaskConfig,
    featurizer: &Featurizer,
    source: &mut dyn LatentSource,
    controller: &mut dyn Controller,
    rng: &mut ChaCha8Rng,
    mut replay: Option<&mut Vec<ReplayRecord>>,
) -> Result<EpisodeStats, PolicyError> {
    featurizer.check_task(task)?;
    let mut world = GridWorld::new(task.clone())?;
    source.reset();
    let mut team_return = 0.0;
    while !world.done() {
        let ids = world.alive_ids();
        if ids.is_empty() {
            break;
        }
        let positions = ids.iter().map(|&i| world.position(i)).collect::<Result<Vec<_>, _>>()?;
        let feats = featurizer.features(&world, &ids)?;
        let latent = source.latents(&ids, &positions, &feats, rng)?;
        let inputs = hstack(&feats, &latent);
        let actions = controller.decide(&ids, &inputs, rng)?;
        let joint: Vec<(usize, usize)> = ids.iter().copied().zip(actions).collect();
        let result = world.step(&joint)?;
        team_return += result.rewards.iter().sum::<f64>();
        controller.feedback(&ids, &result)?;
        if let Some(out) = replay.as_deref_mut() {
            let edges = build_graph(&positions, &ids)?.edges();
            out.push(ReplayRecord::capture(&world, &joint, &result, edges));
        }
    }
    Ok(EpisodeStats {
        team_return,
        end_steps: world.t(),
        food_eaten_frac: 1.0 - world.food_remaining() as f64 / task.n_food as f64,
    })
}

/// `[a ∥ b]` row-wise.
pub fn hstack(a: &Array, b: &Array) -> Array {
    let (n, ca, cb) = (a.rows(), a.cols(), b.cols());
    if cb == 0 {
        return a.clone();
    }
    let mut out = Vec::with_capacity(n * (ca + cb));
    for r in 0..n {
        out.extend_from_slice(a.row(r));
        out.extend_from_slice(b.row(r));
    }
    Array::matrix(n, ca + cb, out)
}

/// One agent's alive steps within one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentTrajectory {
    pub agent: usize,
    /// `len × width`, row-major: `[o ∥ ŝ]`.
    pub inputs: Vec<f64>,
    pub actions: Vec<usize>,
    pub probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Filled by [`RolloutBuffer::finalize`].
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
}

impl AgentTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Trajectories of every agent over a set of episodes. Dead agents simply
/// stop contributing rows, so no explicit mask is stored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub width: usize,
    pub trajectories: Vec<AgentTrajectory>,
    open: BTreeMap<usize, AgentTrajectory>,
}

impl RolloutBuffer {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            trajectories: Vec::new(),
            open: BTreeMap::new(),
        }
    }

    /// Appends one decision per agent of `ids`.
    pub fn push_decisions(
        &mut self,
        ids: &[usize],
        inputs: &Array,
        decisions: &[(usize, f64)],
        values: &[f64],
    ) -> Result<(), PolicyError> {
        if inputs.rows() != ids.len() || decisions.len() != ids.len() || values.len() != ids.len() || inputs.cols() != self.width {
            return Err(PolicyError::Argument("decision rows do not line up".into()));
        }
        for (r, &id) in ids.iter().enumerate() {
            let tr = self.open.entry(id).or_insert_with(|| AgentTrajectory {
                agent: id,
                ..Default::default()
            });
            if tr.rewards.len() != tr.actions.len() {
                return Err(PolicyError::Argument(format!("agent {id} decided twice without a reward")));
            }
            tr.inputs.extend_from_slice(inputs.row(r));
            tr.actions.push(decisions[r].0);
            tr.probs.push(decisions[r].1);
            tr.values.push(values[r]);
        }
        Ok(())
    }

    /// Records the reward of each agent's last decision; agents that died
    /// have their trajectory closed.
    pub fn push_rewards(&mut self, ids: &[usize], result: &StepResult) -> Result<(), PolicyError> {
        for &id in ids {
            let tr = self
                .open
                .get_mut(&id)
                .ok_or_else(|| PolicyError::Argument(format!("reward for agent {id} without a decision")))?;
            tr.rewards.push(result.rewards[id]);
            if !result.alive[id] {
                let tr = self.open.remove(&id).expect("present");
                self.trajectories.push(tr);
            }
        }
        Ok(())
    }

    /// Closes every open trajectory (end of episode).
    pub fn end_episode(&mut self) {
        let open = std::mem::take(&mut self.open);
        self.trajectories.extend(open.into_values());
    }

    /// Computes advantages and discounted returns. Every trajectory ends
    /// with its episode or its agent's death, so the bootstrap value is 0.
    pub fn finalize(&mut self, gamma: f64, lambda: f64) -> Result<(), PolicyError> {
        self.end_episode();
        for tr in &mut self.trajectories {
            if tr.rewards.len() != tr.actions.len() {
                return Err(PolicyError::Argument(format!("agent {} is missing a reward", tr.agent)));
            }
            let mut values = tr.values.clone();
            values.push(0.0);
            tr.advantages = Some(compute_gae(&tr.rewards, &values, gamma, lambda)?);
            tr.returns = Some(compute_returns(&tr.rewards, gamma));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.trajectories.iter().map(AgentTrajectory::len).sum::<usize>()
            + self.open.values().map(AgentTrajectory::len).sum::<usize>()
    }

    /// All finalized samples in trajectory order.
    pub fn to_batch(&self) -> Result<PpoBatch, PolicyError> {
        if !self.open.is_empty() {
            return Err(PolicyError::Argument("buffer has open trajectories".into()));
        }
        let m = self.samples();
        let mut batch = PpoBatch {
            inputs: Array::zeros(&[0, self.width]),
            actions: Vec::with_capacity(m),
            old_probs: Vec::with_capacity(m),
            advantages: Vec::with_capacity(m),
            returns: Vec::with_capacity(m),
        };
        let mut inputs = Vec::with_capacity(m * self.width);
        for tr in &self.trajectories {
            let (Some(a), Some(r)) = (&tr.advantages, &tr.returns) else {
                return Err(PolicyError::Argument("buffer is not finalized".into()));
            };
            inputs.extend_from_slice(&tr.inputs);
            batch.actions.extend_from_slice(&tr.actions);
            batch.old_probs.extend_from_slice(&tr.probs);
            batch.advantages.extend_from_slice(a);
            batch.returns.extend_from_slice(r);
        }
        batch.inputs = Array::matrix(m, self.width, inputs);
        Ok(batch)
    }
}
