//! Random-policy episode corpus for pre-training.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NvifError;
use crate::commgraph::build_graph;
use crate::diffcore::checkpoint::{read_tensors, write_tensors, Dtype};
use crate::diffcore::Array;
use crate::env_gather::{normalized_position, observe_into, GridWorld, TaskConfig, ACTION_COUNT};

/// Joint observation of one timestep. Rows follow `ids` (ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStep {
    pub ids: Vec<usize>,
    /// `ids.len() × obs_len`, row-major.
    pub obs: Vec<f32>,
    /// Normalized positions.
    pub positions: Vec<(f64, f64)>,
    /// Neighbor-rule edges between `ids`.
    pub edges: Vec<(usize, usize)>,
}

impl EpisodeStep {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn obs_row(&self, r: usize, obs_len: usize) -> &[f32] {
        &self.obs[r * obs_len..(r + 1) * obs_len]
    }

    pub fn obs_array(&self, obs_len: usize) -> Array {
        Array::matrix(self.n(), obs_len, self.obs.iter().map(|&v| v as f64).collect())
    }

    pub fn positions_array(&self) -> Array {
        Array::matrix(
            self.n(),
            2,
            self.positions.iter().flat_map(|&(x, y)| [x, y]).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainBuffer {
    pub obs_len: usize,
    pub episodes: Vec<Episode>,
}

/// Seed of episode `index` in a corpus seeded with `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Snapshot of the current joint observation, graph included.
pub fn capture_step(world: &GridWorld) -> Result<EpisodeStep, NvifError> {
    let ids = world.alive_ids();
    let obs_len = world.config().obs_len();
    let mut obs = vec![0.0f32; ids.len() * obs_len];
    let mut scratch = vec![0.0; obs_len];
    let mut raw_pos = Vec::with_capacity(ids.len());
    let mut positions = Vec::with_capacity(ids.len());
    for (r, &id) in ids.iter().enumerate() {
        observe_into(world, id, &mut scratch)?;
        for (o, &v) in obs[r * obs_len..(r + 1) * obs_len].iter_mut().zip(&scratch) {
            *o = v as f32;
        }
        let p = world.position(id)?;
        raw_pos.push(p);
        positions.push(normalized_position(world, p));
    }
    let edges = if ids.is_empty() {
        Vec::new()
    } else {
        build_graph(&raw_pos, &ids)?.edges()
    };
    Ok(EpisodeStep {
        ids,
        obs,
        positions,
        edges,
    })
}

/// Plays `episodes` episodes with uniformly random actions and records
/// every pre-action joint observation.
pub fn collect_random(task: &TaskConfig, episodes: usize, seed: u64) -> Result<PretrainBuffer, NvifError> {
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let s = episode_seed(seed, e);
        let mut world = GridWorld::new(task.with_seed(s))?;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut ep = Episode::default();
        while !world.done() {
            let step = capture_step(&world)?;
            if step.ids.is_empty() {
                break;
            }
            let actions: Vec<_> = step
                .ids
                .iter()
                .map(|&a| (a, rng.random_range(0..ACTION_COUNT)))
                .collect();
            ep.steps.push(step);
            world.step(&actions)?;
        }
        out.push(ep);
    }
    Ok(PretrainBuffer {
        obs_len: task.obs_len(),
        episodes: out,
    })
}

impl PretrainBuffer {
    pub fn agent_steps(&self) -> usize {
        self.episodes
            .iter()
            .flat_map(|e| &e.steps)
            .map(EpisodeStep::n)
            .sum()
    }

    /// All observation rows, flattened, for training the compressor.
    pub fn all_obs(&self) -> Vec<f32> {
        self.episodes
            .iter()
            .flat_map(|e| &e.steps)
            .flat_map(|s| s.obs.iter().copied())
            .collect()
    }

    pub fn validate(&self) -> Result<(), NvifError> {
        if self.episodes.is_empty() {
            return Err(NvifError::Data("buffer holds no episodes".into()));
        }
        for (k, e) in self.episodes.iter().enumerate() {
            match e.steps.first() {
                Some(s) if s.n() > 0 => {}
                _ => return Err(NvifError::Data(format!("episode {k} has no alive agents at t = 0"))),
            }
            for s in &e.steps {
                if s.obs.len() != s.n() * self.obs_len || s.positions.len() != s.n() {
                    return Err(NvifError::Data(format!("episode {k} has ragged rows")));
                }
            }
        }
        Ok(())
    }

    /// Writes the corpus as one tensor file; observations go in as `f32`.
    pub fn save(&self, manifest: &Path) -> Result<(), NvifError> {
        let mut owned: Vec<(String, Array, Dtype)> = Vec::new();
        for (k, e) in self.episodes.iter().enumerate() {
            let rows: usize = e.steps.iter().map(EpisodeStep::n).sum();
            let obs: Vec<f64> = e.steps.iter().flat_map(|s| s.obs.iter().map(|&v| v as f64)).collect();
            let pos: Vec<f64> = e
                .steps
                .iter()
                .flat_map(|s| s.positions.iter().flat_map(|&(x, y)| [x, y]))
                .collect();
            let ids: Vec<f64> = e.steps.iter().flat_map(|s| s.ids.iter().map(|&i| i as f64)).collect();
            let counts: Vec<f64> = e.steps.iter().map(|s| s.n() as f64).collect();
            let edges: Vec<f64> = e
                .steps
                .iter()
                .enumerate()
                .flat_map(|(t, s)| s.edges.iter().flat_map(move |&(a, b)| [t as f64, a as f64, b as f64]))
                .collect();
            let n_edges = edges.len() / 3;
            owned.push((format!("e{k}.obs"), Array::new(vec![rows, self.obs_len], obs)?, Dtype::F32));
            owned.push((format!("e{k}.pos"), Array::new(vec![rows, 2], pos)?, Dtype::F64));
            owned.push((format!("e{k}.ids"), Array::new(vec![rows], ids)?, Dtype::F64));
            owned.push((format!("e{k}.counts"), Array::new(vec![e.steps.len()], counts)?, Dtype::F64));
            owned.push((format!("e{k}.edges"), Array::new(vec![n_edges, 3], edges)?, Dtype::F64));
        }
        let entries: Vec<(String, &Array, Dtype)> =
            owned.iter().map(|(n, a, d)| (n.clone(), a, *d)).collect();
        let meta = serde_json::json!({
            "kind": "pretrain-buffer",
            "obs_len": self.obs_len,
            "episodes": self.episodes.len(),
        });
        write_tensors(manifest, &entries, meta)?;
        Ok(())
    }

    pub fn load(manifest: &Path) -> Result<Self, NvifError> {
        let (entries, meta) = read_tensors(manifest)?;
        let bad = |m: &str| NvifError::Data(format!("{}: {m}", manifest.display()));
        if meta.get("kind").and_then(|k| k.as_str()) != Some("pretrain-buffer") {
            return Err(bad("not a pre-training buffer"));
        }
        let obs_len = meta["obs_len"].as_u64().ok_or_else(|| bad("missing obs_len"))? as usize;
        let n_episodes = meta["episodes"].as_u64().ok_or_else(|| bad("missing episode count"))? as usize;
        let map: std::collections::HashMap<String, Array> = entries.into_iter().collect();
        let get = |k: usize, part: &str| map.get(&format!("e{k}.{part}")).ok_or_else(|| bad(&format!("missing e{k}.{part}")));
        let mut episodes = Vec::with_capacity(n_episodes);
        for k in 0..n_episodes {
            let (obs, pos, ids, counts, edges) =
                (get(k, "obs")?, get(k, "pos")?, get(k, "ids")?, get(k, "counts")?, get(k, "edges")?);
            let mut steps: Vec<EpisodeStep> = Vec::with_capacity(counts.len());
            let mut row = 0;
            for &c in counts.data() {
                let c = c as usize;
                steps.push(EpisodeStep {
                    ids: ids.data()[row..row + c].iter().map(|&v| v as usize).collect(),
                    obs: obs.data()[row * obs_len..(row + c) * obs_len].iter().map(|&v| v as f32).collect(),
                    positions: (row..row + c).map(|r| (pos.data()[2 * r], pos.data()[2 * r + 1])).collect(),
                    edges: Vec::new(),
                });
                row += c;
            }
            for e in edges.data().chunks(3) {
                let t = e[0] as usize;
                steps
                    .get_mut(t)
                    .ok_or_else(|| bad("edge timestep out of range"))?
                    .edges
                    .push((e[1] as usize, e[2] as usize));
            }
            episodes.push(Episode { steps });
        }
        Ok(Self { obs_len, episodes })
    }
}
