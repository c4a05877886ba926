//! Deep Q-learning on `[o ∥ ŝ]` with experience replay and a target network.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::LatentSource;
use super::ppo::episode_rng;
use super::rollout::{run_episode, Controller, Featurizer};
use super::PolicyError;
use crate::diffcore::checkpoint::{load_store, save_store};
use crate::diffcore::{clip_grad_norm, Adam, Array, Moments, ParamStore, Tape, TwoLayerMlp};
use crate::env_gather::{StepResult, TaskConfig, ACTION_COUNT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnHyper {
    pub gamma: f64,
    pub lr: f64,
    pub episodes: usize,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Environment steps between target refreshes.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment step at which `eps_end` is reached.
    pub eps_decay_steps: usize,
    /// Transitions stored before learning starts.
    pub warmup: usize,
    pub hidden: usize,
    pub max_grad_norm: f64,
    pub moments: Moments,
    pub seed: u64,
}

impl Default for DqnHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-3,
            episodes: 200,
            replay_capacity: 100_000,
            batch: 64,
            target_sync: 1000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 50_000,
            warmup: 1000,
            hidden: 64,
            max_grad_norm: 10.0,
            moments: Moments::default(),
            seed: 0,
        }
    }
}

impl DqnHyper {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            out.push(format!("gamma = {} not in (0, 1]", self.gamma));
        }
        for (name, v) in [
            ("episodes", self.episodes),
            ("replay_capacity", self.replay_capacity),
            ("batch", self.batch),
            ("target_sync", self.target_sync),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} = {v} not in [0, 1]"));
            }
        }
        if !(self.lr > 0.0) {
            out.push(format!("lr = {} must be positive", self.lr));
        }
        out.extend(self.moments.problems().into_iter().map(|p| format!("moments.{p}")));
        out
    }
}

/// Linear ε schedule from `eps_start` at step 0 to `eps_end` at
/// `eps_decay_steps`, constant afterwards.
pub fn epsilon_at(hyper: &DqnHyper, step: usize) -> f64 {
    if step >= hyper.eps_decay_steps {
        return hyper.eps_end;
    }
    let f = step as f64 / hyper.eps_decay_steps as f64;
    hyper.eps_start + (hyper.eps_end - hyper.eps_start) * f
}

/// `y = r` at a terminal transition, `r + γ max_a Q_target(s', a)` otherwise.
pub fn q_target(reward: f64, next_max: f64, done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub input: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Uniform draw with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Online and target Q-networks sharing one layout.
#[derive(Clone, Debug)]
pub struct QLearner {
    pub obs_width: usize,
    pub latent_width: usize,
    pub online: ParamStore,
    pub target: ParamStore,
    pub net: TwoLayerMlp,
    /// Gradient steps taken so far.
    pub updates: usize,
}

impl QLearner {
    pub fn new<R: Rng + ?Sized>(obs_width: usize, latent_width: usize, hidden: usize, rng: &mut R) -> Result<Self, PolicyError> {
        let mut online = ParamStore::new();
        let net = TwoLayerMlp::new(&mut online, "q", obs_width + latent_width, hidden, ACTION_COUNT, rng)?;
        Ok(Self {
            obs_width,
            latent_width,
            target: online.clone(),
            online,
            net,
            updates: 0,
        })
    }

    pub fn input_width(&self) -> usize {
        self.obs_width + self.latent_width
    }

    fn q_with(&self, store: &ParamStore, inputs: &Array) -> Result<Array, PolicyError> {
        let mut tape = Tape::new();
        let x = tape.constant_ref(inputs);
        let q = self.net.forward(&mut tape, store, x)?;
        Ok(tape.value(q).clone())
    }

    pub fn q_values(&self, inputs: &Array) -> Result<Array, PolicyError> {
        self.q_with(&self.online, inputs)
    }

    pub fn target_q_values(&self, inputs: &Array) -> Result<Array, PolicyError> {
        self.q_with(&self.target, inputs)
    }

    pub fn greedy(&self, inputs: &Array) -> Result<Vec<usize>, PolicyError> {
        let q = self.q_values(inputs)?;
        Ok((0..q.rows()).map(|r| argmax(q.row(r))).collect())
    }

    pub fn sync_target(&mut self) -> Result<(), PolicyError> {
        Ok(self.target.copy_values_from(&self.online)?)
    }

    /// Writes the online network; the target is restored as a copy.
    pub fn save(&self, manifest: &Path) -> Result<(), PolicyError> {
        let meta = serde_json::json!({
            "kind": "q-network",
            "obs_width": self.obs_width,
            "latent_width": self.latent_width,
            "updates": self.updates,
        });
        Ok(save_store(&self.online, manifest, meta)?)
    }

    pub fn load(manifest: &Path) -> Result<Self, PolicyError> {
        let (online, meta) = load_store(manifest)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("q-network") {
            return Err(PolicyError::Config(format!("{} is not a Q-network checkpoint", manifest.display())));
        }
        let field = |k: &str| {
            meta.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| PolicyError::Config(format!("checkpoint lacks {k}")))
        };
        let (obs_width, latent_width, updates) = (field("obs_width")?, field("latent_width")?, field("updates")?);
        let net = TwoLayerMlp::existing(&online, "q")?;
        if net.fan_in() != obs_width + latent_width || net.fan_out() != ACTION_COUNT {
            return Err(PolicyError::Config("Q-network shape disagrees with checkpoint metadata".into()));
        }
        Ok(Self {
            obs_width,
            latent_width,
            target: online.clone(),
            online,
            net,
            updates,
        })
    }

    /// One regression step of `Q(s, a)` towards the target values.
    pub fn learn(&mut self, batch: &[&Transition], hyper: &DqnHyper, opt: &Adam) -> Result<f64, PolicyError> {
        let m = batch.len();
        let w = self.input_width();
        let next = Array::matrix(m, w, batch.iter().flat_map(|t| t.next.iter().copied()).collect());
        let next_q = self.target_q_values(&next)?;
        let y: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let mx = next_q.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                q_target(t.reward, mx, t.done, hyper.gamma)
            })
            .collect();
        let inputs = Array::matrix(m, w, batch.iter().flat_map(|t| t.input.iter().copied()).collect());
        let (loss, grads) = {
            let mut tape = Tape::new();
            let x = tape.constant(inputs);
            let q = self.net.forward(&mut tape, &self.online, x)?;
            let taken = tape.pick(q, batch.iter().map(|t| t.action).collect())?;
            let target = tape.constant(Array::matrix(m, 1, y));
            let loss = tape.mse(taken, target)?;
            (tape.value(loss).item(), tape.backward(loss)?)
        };
        self.online.zero_grad();
        self.online.accumulate(&grads);
        clip_grad_norm(&mut self.online, hyper.max_grad_norm);
        opt.step(&mut self.online);
        self.updates += 1;
        Ok(loss)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnEpisode {
    pub episode: usize,
    pub team_return: f64,
    pub end_steps: usize,
    pub food_eaten_frac: f64,
    pub epsilon: f64,
}

struct Learner<'a> {
    q: &'a mut QLearner,
    memory: &'a mut ReplayMemory,
    hyper: &'a DqnHyper,
    opt: Adam,
    /// Environment steps so far, over all episodes.
    steps: &'a mut usize,
    pending: BTreeMap<usize, (Vec<f64>, usize, Option<f64>)>,
    rng: ChaCha8Rng,
}

impl Learner<'_> {
    fn flush(&mut self) {
        let w = self.q.input_width();
        for (_, (input, action, reward)) in std::mem::take(&mut self.pending) {
            if let Some(reward) = reward {
                self.memory.push(Transition {
                    input,
                    action,
                    reward,
                    next: vec![0.0; w],
                    done: true,
                });
            }
        }
    }
}

impl Controller for Learner<'_> {
    fn decide(&mut self, ids: &[usize], inputs: &Array, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, PolicyError> {
        for (r, id) in ids.iter().enumerate() {
            if let Some((input, action, Some(reward))) = self.pending.remove(id) {
                self.memory.push(Transition {
                    input,
                    action,
                    reward,
                    next: inputs.row(r).to_vec(),
                    done: false,
                });
            }
        }
        let eps = epsilon_at(self.hyper, *self.steps);
        let greedy = self.q.greedy(inputs)?;
        let actions: Vec<usize> = greedy
            .into_iter()
            .map(|g| {
                if rng.random::<f64>() < eps {
                    rng.random_range(0..ACTION_COUNT)
                } else {
                    g
                }
            })
            .collect();
        for (r, (&id, &a)) in ids.iter().zip(&actions).enumerate() {
            self.pending.insert(id, (inputs.row(r).to_vec(), a, None));
        }
        Ok(actions)
    }

    fn feedback(&mut self, ids: &[usize], result: &StepResult) -> Result<(), PolicyError> {
        let w = self.q.input_width();
        for &id in ids {
            if let Some(entry) = self.pending.get_mut(&id) {
                entry.2 = Some(result.rewards[id]);
            }
            if !result.alive[id] {
                if let Some((input, action, Some(reward))) = self.pending.remove(&id) {
                    self.memory.push(Transition {
                        input,
                        action,
                        reward,
                        next: vec![0.0; w],
                        done: true,
                    });
                }
            }
        }
        *self.steps += 1;
        if self.memory.len() >= self.hyper.warmup.max(self.hyper.batch) {
            let batch: Vec<Transition> =
                self.memory.sample(self.hyper.batch, &mut self.rng).into_iter().cloned().collect();
            let refs: Vec<&Transition> = batch.iter().collect();
            self.q.learn(&refs, self.hyper, &self.opt)?;
        }
        if *self.steps % self.hyper.target_sync == 0 {
            self.q.sync_target()?;
        }
        Ok(())
    }
}

/// Trains a shared Q-network for `hyper.episodes` episodes.
pub fn train_nvif_dqn(
    task: &TaskConfig,
    featurizer: &Featurizer,
    source: &mut dyn LatentSource,
    hyper: &DqnHyper,
) -> Result<(QLearner, Vec<DqnEpisode>), PolicyError> {
    let problems = hyper.problems();
    if !problems.is_empty() {
        return Err(PolicyError::Config(problems.join("; ")));
    }
    featurizer.check_task(task)?;
    if let Some(w) = source.feature_width() {
        if w != featurizer.width() {
            return Err(PolicyError::Config(format!(
                "latent source expects {w}-wide features, compressor emits {}",
                featurizer.width()
            )));
        }
    }
    let mut init = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut q = QLearner::new(featurizer.width(), source.width(), hyper.hidden, &mut init)?;
    let mut memory = ReplayMemory::new(hyper.replay_capacity);
    let mut steps = 0usize;
    let mut learn_rng = init.clone();
    learn_rng.set_stream(u64::MAX);
    let mut history = Vec::with_capacity(hyper.episodes);
    for e in 0..hyper.episodes {
        let mut rng = episode_rng(hyper.seed, 0, e);
        let episode_task = task.with_seed(rng.random());
        let epsilon = epsilon_at(hyper, steps);
        let mut learner = Learner {
            q: &mut q,
            memory: &mut memory,
            hyper,
            opt: Adam::new(hyper.lr, hyper.moments),
            steps: &mut steps,
            pending: BTreeMap::new(),
            rng: learn_rng.clone(),
        };
        let stats = run_episode(&episode_task, featurizer, source, &mut learner, &mut rng, None)?;
        learner.flush();
        learn_rng = learner.rng.clone();
        history.push(DqnEpisode {
            episode: e + 1,
            team_return: stats.team_return,
            end_steps: stats.end_steps,
            food_eaten_frac: stats.food_eaten_frac,
            epsilon,
        });
    }
    Ok((q, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_definition() {
        assert_eq!(q_target(1.0, 5.0, true, 0.9), 1.0);
        assert_eq!(q_target(1.0, 5.0, false, 0.5), 3.5);
    }

    #[test]
    fn epsilon_endpoint_is_exact() {
        let h = DqnHyper {
            eps_decay_steps: 300,
            ..DqnHyper::default()
        };
        assert_eq!(epsilon_at(&h, 0), 1.0);
        assert_eq!(epsilon_at(&h, 300), 0.05);
        assert_eq!(epsilon_at(&h, 10_000), 0.05);
        assert!(epsilon_at(&h, 299) > 0.05);
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let mut m = ReplayMemory::new(2);
        for k in 0..3 {
            m.push(Transition {
                input: vec![k as f64],
                action: 0,
                reward: 0.0,
                next: vec![0.0],
                done: true,
            });
        }
        assert_eq!(m.len(), 2);
        assert_eq!(m.items[0].input, vec![2.0]);
    }
}
