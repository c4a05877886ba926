//! PPO with agent-specific rewards over a frozen latent source.

use std::fs::OpenOptions;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::LatentSource;
use super::network::{ActorCritic, NetworkConfig};
use super::objective::{critic_loss_var, ppo_actor_terms, PpoBatch};
use super::rollout::{run_episode, Controller, EpisodeStats, Featurizer, RolloutBuffer};
use super::PolicyError;
use crate::diffcore::{clip_grad_norm, Adam, Array, Moments, Tape};
use crate::env_gather::{StepResult, TaskConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoHyper {
    pub gamma: f64,
    pub lambda: f64,
    /// Clip coefficient ε.
    pub clip: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Passes over the epoch's samples.
    pub update_passes: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub network: NetworkConfig,
    pub moments: Moments,
    pub seed: u64,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 250,
            episodes_per_epoch: 8,
            update_passes: 4,
            minibatch: 256,
            entropy_coef: 0.01,
            lr: 1e-3,
            max_grad_norm: 0.5,
            network: NetworkConfig::default(),
            moments: Moments::default(),
            seed: 0,
        }
    }
}

impl PpoHyper {
    /// Names of the fields holding out-of-range values.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            out.push(format!("gamma = {} not in (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            out.push(format!("lambda = {} not in [0, 1]", self.lambda));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            out.push(format!("clip = {} not in (0, 1)", self.clip));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("update_passes", self.update_passes),
            ("minibatch", self.minibatch),
            ("network.hidden", self.network.hidden),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0) {
            out.push(format!("lr = {} must be positive", self.lr));
        }
        out.extend(self.moments.problems().into_iter().map(|p| format!("moments.{p}")));
        out
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_return: f64,
    pub mean_end_steps: f64,
    pub food_eaten_frac: f64,
    pub actor_obj: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

/// Appends rows to a metrics CSV, writing the header if the file is new.
pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<(), PolicyError> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| PolicyError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, PolicyError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| PolicyError::Io(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| PolicyError::Io(e.to_string())))
        .collect()
}

/// Generator for episode `episode` of epoch `epoch`. Streams depend only
/// on `(seed, epoch, episode)`, so any epoch can be replayed in isolation.
pub fn episode_rng(seed: u64, epoch: usize, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | episode as u64);
    rng
}

fn update_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    episode_rng(seed, epoch, u32::MAX as usize)
}

/// Samples from the actor and records into a [`RolloutBuffer`].
struct Collector<'a> {
    net: &'a ActorCritic,
    buffer: &'a mut RolloutBuffer,
}

impl Controller for Collector<'_> {
    fn decide(&mut self, ids: &[usize], inputs: &Array, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, PolicyError> {
        let (decisions, values) = self.net.act_and_value(inputs, rng)?;
        self.buffer.push_decisions(ids, inputs, &decisions, &values)?;
        Ok(decisions.into_iter().map(|(a, _)| a).collect())
    }

    fn feedback(&mut self, ids: &[usize], result: &StepResult) -> Result<(), PolicyError> {
        self.buffer.push_rewards(ids, result)
    }
}

/// Training state that can be checkpointed between epochs.
pub struct PpoTrainer {
    pub task: TaskConfig,
    pub hyper: PpoHyper,
    pub featurizer: Featurizer,
    pub source: Box<dyn LatentSource>,
    pub net: ActorCritic,
    /// Completed epochs.
    pub epoch: usize,
}

impl PpoTrainer {
    pub fn new(
        task: TaskConfig,
        featurizer: Featurizer,
        source: Box<dyn LatentSource>,
        hyper: PpoHyper,
    ) -> Result<Self, PolicyError> {
        let problems = hyper.problems();
        if !problems.is_empty() {
            return Err(PolicyError::Config(problems.join("; ")));
        }
        featurizer.check_task(&task)?;
        if let Some(w) = source.feature_width() {
            if w != featurizer.width() {
                return Err(PolicyError::Config(format!(
                    "latent source expects {w}-wide features, compressor emits {}",
                    featurizer.width()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let net = ActorCritic::new(featurizer.width(), source.width(), &hyper.network, &mut rng)?;
        Ok(Self {
            task,
            hyper,
            featurizer,
            source,
            net,
            epoch: 0,
        })
    }

    /// Collects one epoch of episodes and updates the networks.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics, PolicyError> {
        let epoch = self.epoch + 1;
        let h = self.hyper.clone();
        let mut buffer = RolloutBuffer::new(self.net.input_width());
        let mut stats = Vec::with_capacity(h.episodes_per_epoch);
        for k in 0..h.episodes_per_epoch {
            let mut rng = episode_rng(h.seed, epoch, k);
            let task = self.task.with_seed(rng.random());
            let mut collector = Collector {
                net: &self.net,
                buffer: &mut buffer,
            };
            stats.push(run_episode(&task, &self.featurizer, self.source.as_mut(), &mut collector, &mut rng, None)?);
            buffer.end_episode();
        }
        buffer.finalize(h.gamma, h.lambda)?;
        let mut batch = buffer.to_batch()?;
        batch.normalize_advantages();
        let (actor_obj, critic_loss, entropy) = self.update(&batch, epoch)?;
        self.epoch = epoch;
        Ok(summarize(epoch, &stats, actor_obj, critic_loss, entropy))
    }

    /// `k` passes of minibatch steps. Returns the mean pre-step actor
    /// objective, critic loss and entropy.
    fn update(&mut self, batch: &PpoBatch, epoch: usize) -> Result<(f64, f64, f64), PolicyError> {
        let h = &self.hyper;
        let opt = Adam::new(h.lr, h.moments);
        let mut rng = update_rng(h.seed, epoch);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let (mut sums, mut steps) = ([0.0; 3], 0usize);
        for _ in 0..h.update_passes {
            order.shuffle(&mut rng);
            for chunk in order.chunks(h.minibatch) {
                let mb = batch.select(chunk);
                let grads = {
                    let mut tape = Tape::new();
                    let terms = ppo_actor_terms(&mut tape, &self.net, &self.net.store, &mb, h.clip, h.entropy_coef)?;
                    let critic = critic_loss_var(&mut tape, &self.net, &self.net.store, &mb.inputs, &mb.returns)?;
                    sums[0] += tape.value(terms.objective).item();
                    sums[1] += tape.value(critic).item();
                    sums[2] += tape.value(terms.entropy).item();
                    let neg = tape.scale(terms.objective, -1.0);
                    let loss = tape.add(neg, critic)?;
                    tape.backward(loss)?
                };
                steps += 1;
                self.net.store.zero_grad();
                self.net.store.accumulate(&grads);
                clip_grad_norm(&mut self.net.store, h.max_grad_norm);
                opt.step(&mut self.net.store);
            }
        }
        let n = steps.max(1) as f64;
        Ok((sums[0] / n, sums[1] / n, sums[2] / n))
    }

    /// Writes the networks, optimizer state and epoch counter.
    pub fn save(&self, manifest: &Path) -> Result<(), PolicyError> {
        self.net.save(
            manifest,
            serde_json::json!({ "epoch": self.epoch, "hyper": self.hyper }),
        )
    }

    /// Restores a state written by [`Self::save`] into a trainer built with
    /// the same task, featurizer, source and hyper-parameters.
    pub fn resume(&mut self, manifest: &Path) -> Result<(), PolicyError> {
        let (net, extra) = ActorCritic::load(manifest)?;
        if net.input_width() != self.net.input_width() {
            return Err(PolicyError::Config("checkpoint input width differs".into()));
        }
        let hyper: PpoHyper = serde_json::from_value(extra["hyper"].clone())
            .map_err(|e| PolicyError::Config(format!("checkpoint hyper-parameters: {e}")))?;
        if hyper != self.hyper {
            return Err(PolicyError::Config("checkpoint was trained with different hyper-parameters".into()));
        }
        self.epoch = extra["epoch"]
            .as_u64()
            .ok_or_else(|| PolicyError::Config("checkpoint lacks the epoch counter".into()))? as usize;
        self.net = net;
        Ok(())
    }
}

fn summarize(epoch: usize, stats: &[EpisodeStats], actor_obj: f64, critic_loss: f64, entropy: f64) -> EpochMetrics {
    let n = stats.len().max(1) as f64;
    EpochMetrics {
        epoch,
        mean_return: stats.iter().map(|s| s.team_return).sum::<f64>() / n,
        mean_end_steps: stats.iter().map(|s| s.end_steps as f64).sum::<f64>() / n,
        food_eaten_frac: stats.iter().map(|s| s.food_eaten_frac).sum::<f64>() / n,
        actor_obj,
        critic_loss,
        entropy,
    }
}

/// Runs `hyper.epochs` epochs (or until `stop` returns `true` after an
/// epoch) and returns the trainer with the metrics of every epoch.
pub fn train_nvif_ppo(
    task: &TaskConfig,
    featurizer: Featurizer,
    source: Box<dyn LatentSource>,
    hyper: &PpoHyper,
    mut stop: impl FnMut(&EpochMetrics) -> bool,
) -> Result<(PpoTrainer, Vec<EpochMetrics>), PolicyError> {
    let mut trainer = PpoTrainer::new(task.clone(), featurizer, source, hyper.clone())?;
    let mut history = Vec::with_capacity(hyper.epochs);
    while trainer.epoch < hyper.epochs {
        let m = trainer.run_epoch()?;
        history.push(m);
        if stop(&m) {
            break;
        }
    }
    Ok((trainer, history))
}
