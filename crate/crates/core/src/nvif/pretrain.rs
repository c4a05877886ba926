//! Pre-training loop for the NVIF encoder and decoder.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{EpisodeStep, PretrainBuffer};
use super::compressor::ObsCompressor;
use super::losses::{consistency_sum_var, kl_sum_var, NvifLossReport};
use super::{NvifError, NvifModel};
use crate::commgraph::{block_diagonal, complete_on, edgeless, normalize, NeighborGraph};
use crate::diffcore::{gaussian_sample, Adam, Array, Moments, ParamStore, Tape, Var};

/// Which communication graph the encoder sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    /// Nearest agent per direction.
    #[default]
    Neighbor,
    /// Every pair of alive agents.
    Complete,
    /// Self-loops only.
    Edgeless,
}

impl GraphMode {
    pub fn graph(self, ids: &[usize], neighbor_edges: &[(usize, usize)]) -> Result<NeighborGraph, NvifError> {
        Ok(match self {
            GraphMode::Neighbor => NeighborGraph::from_edges(ids, neighbor_edges)?,
            GraphMode::Complete => complete_on(ids)?,
            GraphMode::Edgeless => edgeless(ids)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Episodes per optimizer step.
    pub batch_episodes: usize,
    pub lr: f64,
    pub seed: u64,
    pub graph: GraphMode,
    pub moments: Moments,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_episodes: 4,
            lr: 1e-3,
            seed: 0,
            graph: GraphMode::Neighbor,
            moments: Moments::default(),
        }
    }
}

/// Compressed observation features, indexed `[episode][timestep]`.
pub type FeatureCache = Vec<Vec<Array>>;

pub fn encode_buffer(compressor: &ObsCompressor, buffer: &PretrainBuffer) -> Result<FeatureCache, NvifError> {
    buffer
        .episodes
        .iter()
        .map(|e| e.steps.iter().map(|s| compressor.compress_f32(&s.obs)).collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    /// Means over the epoch's agent-steps.
    pub loss: NvifLossReport,
}

/// Loss of one batch of episodes, left on the tape.
pub struct BatchLoss {
    pub loss: Var,
    pub report: NvifLossReport,
    pub agent_steps: usize,
}

/// Runs the encoder over `episodes` in lockstep and builds the objective
/// `recon + kl + α·consistency`, each term averaged over agent-steps.
///
/// Episodes are stacked as one disjoint graph per timestep; consistency is
/// measured within each (episode, timestep) group.
pub fn batch_loss<'p>(
    tape: &mut Tape<'p>,
    model: &NvifModel,
    store: &'p ParamStore,
    episodes: &[(&[EpisodeStep], &[Array])],
    graph: GraphMode,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss, NvifError> {
    let obs_len = model.obs_len;
    let d_h = model.config.d_h;
    let horizon = episodes.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
    // (episode, agent id) of every row of the previous timestep.
    let mut prev_rows: Vec<(usize, usize)> = Vec::new();
    let mut prev_hidden: Option<Var> = None;
    let (mut recon, mut kl, mut cons): (Option<Var>, Option<Var>, Option<Var>) = (None, None, None);
    let mut rows_total = 0usize;
    let acc = |tape: &mut Tape<'p>, slot: &mut Option<Var>, v: Var| -> Result<(), NvifError> {
        *slot = Some(match *slot {
            Some(s) => tape.add(s, v)?,
            None => v,
        });
        Ok(())
    };

    for t in 0..horizon {
        let mut blocks = Vec::new();
        let mut rows: Vec<(usize, usize)> = Vec::new();
        let mut groups = Vec::new();
        let mut feats = Vec::new();
        let mut targets = Vec::new();
        let mut positions = Vec::new();
        for (e, (steps, fs)) in episodes.iter().enumerate() {
            let Some(step) = steps.get(t) else { continue };
            if step.n() == 0 {
                continue;
            }
            blocks.push(normalize(&graph.graph(&step.ids, &step.edges)?));
            rows.extend(step.ids.iter().map(|&i| (e, i)));
            groups.extend(std::iter::repeat_n(groups_len(&blocks), step.n()));
            feats.push(&fs[t]);
            targets.extend(step.obs.iter().map(|&v| v as f64));
            positions.extend(step.positions.iter().flat_map(|&(x, y)| [x, y]));
        }
        if rows.is_empty() {
            break;
        }
        let n = rows.len();
        let adj = Rc::new(block_diagonal(&blocks));
        let obs = tape.constant(Array::vstack(&feats)?);
        let hidden = match prev_hidden {
            None => tape.constant(Array::zeros(&[n, d_h])),
            Some(h) => {
                let lookup: std::collections::HashMap<(usize, usize), usize> =
                    prev_rows.iter().enumerate().map(|(r, &k)| (k, r)).collect();
                let idx = rows.iter().map(|k| lookup.get(k).copied()).collect();
                tape.gather_rows(h, idx)?
            }
        };
        let step = model.step_var(tape, store, obs, hidden, &adj)?;
        let s = gaussian_sample(tape, step.mu, step.log_sigma, rng)?;
        let x = tape.constant(Array::matrix(n, 2, positions));
        let pred = model.decode_var(tape, store, s, x)?;
        let target = tape.constant(Array::matrix(n, obs_len, targets));
        let r = tape.bce_sum(target, pred)?;
        acc(tape, &mut recon, r)?;
        let k = kl_sum_var(tape, step.mu, step.log_sigma);
        acc(tape, &mut kl, k)?;
        let c = consistency_sum_var(tape, s, groups)?;
        acc(tape, &mut cons, c)?;
        rows_total += n;
        prev_rows = rows;
        prev_hidden = Some(step.hidden);
    }
    let (Some(recon), Some(kl), Some(cons)) = (recon, kl, cons) else {
        return Err(NvifError::Data("batch has no alive agents".into()));
    };
    let nr = rows_total as f64;
    let recon = tape.scale(recon, 1.0 / (nr * obs_len as f64));
    let kl = tape.scale(kl, 1.0 / nr);
    let cons = tape.scale(cons, 1.0 / nr);
    let weighted = tape.scale(cons, model.config.alpha);
    let partial = tape.add(recon, kl)?;
    let loss = tape.add(partial, weighted)?;
    let report = NvifLossReport::new(
        tape.value(recon).item(),
        tape.value(kl).item(),
        tape.value(cons).item(),
        model.config.alpha,
    );
    Ok(BatchLoss {
        loss,
        report,
        agent_steps: rows_total,
    })
}

fn groups_len(blocks: &[crate::commgraph::NormalizedAdjacency]) -> usize {
    blocks.len() - 1
}

/// Trains `model` on `buffer`. `stop` sees the history after every epoch
/// and may end training early by returning `true`.
pub fn pretrain(
    model: &mut NvifModel,
    buffer: &PretrainBuffer,
    features: &FeatureCache,
    config: &PretrainConfig,
    mut stop: impl FnMut(&[PretrainEpoch]) -> bool,
) -> Result<Vec<PretrainEpoch>, NvifError> {
    buffer.validate()?;
    if buffer.obs_len != model.obs_len {
        return Err(NvifError::Config(format!(
            "buffer observations are {} wide, decoder emits {}",
            buffer.obs_len, model.obs_len
        )));
    }
    if features.len() != buffer.episodes.len() {
        return Err(NvifError::Data("feature cache does not match the buffer".into()));
    }
    let opt = Adam::new(config.lr, config.moments);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..buffer.episodes.len()).collect();
    let mut history = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut rows = 0usize;
        for chunk in order.chunks(config.batch_episodes.max(1)) {
            let eps: Vec<(&[EpisodeStep], &[Array])> = chunk
                .iter()
                .map(|&k| (buffer.episodes[k].steps.as_slice(), features[k].as_slice()))
                .collect();
            let grads = {
                let mut tape = Tape::new();
                let b = batch_loss(&mut tape, model, &model.store, &eps, config.graph, &mut rng)?;
                let w = b.agent_steps as f64;
                sums[0] += b.report.recon * w;
                sums[1] += b.report.kl * w;
                sums[2] += b.report.consistency * w;
                rows += b.agent_steps;
                tape.backward(b.loss)?
            };
            model.store.zero_grad();
            model.store.accumulate(&grads);
            opt.step(&mut model.store);
        }
        let n = rows as f64;
        history.push(PretrainEpoch {
            epoch,
            loss: NvifLossReport::new(sums[0] / n, sums[1] / n, sums[2] / n, model.config.alpha),
        });
        if stop(&history) {
            break;
        }
    }
    Ok(history)
}

/// Loss of the current model on the whole buffer without updating it.
pub fn evaluate_loss(
    model: &NvifModel,
    buffer: &PretrainBuffer,
    features: &FeatureCache,
    config: &PretrainConfig,
    seed: u64,
) -> Result<NvifLossReport, NvifError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = [0.0; 3];
    let mut rows = 0usize;
    let idx: Vec<usize> = (0..buffer.episodes.len()).collect();
    for chunk in idx.chunks(config.batch_episodes.max(1)) {
        let eps: Vec<(&[EpisodeStep], &[Array])> = chunk
            .iter()
            .map(|&k| (buffer.episodes[k].steps.as_slice(), features[k].as_slice()))
            .collect();
        let mut tape = Tape::new();
        let b = batch_loss(&mut tape, model, &model.store, &eps, config.graph, &mut rng)?;
        let w = b.agent_steps as f64;
        sums[0] += b.report.recon * w;
        sums[1] += b.report.kl * w;
        sums[2] += b.report.consistency * w;
        rows += b.agent_steps;
    }
    let n = rows as f64;
    Ok(NvifLossReport::new(sums[0] / n, sums[1] / n, sums[2] / n, model.config.alpha))
}
