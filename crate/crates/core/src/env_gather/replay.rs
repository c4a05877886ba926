use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use serde::{Deserialize, Serialize};

use super::world::{GridWorld, StepResult};
use super::EnvError;

/// One JSON line per timestep. Per-agent vectors are indexed by agent id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    /// Timestep after the transition.
    pub t: usize,
    pub positions: Vec<(usize, usize)>,
    pub hps: Vec<u32>,
    pub alive: Vec<bool>,
    /// `None` for agents that were dead when the step began.
    pub actions: Vec<Option<usize>>,
    pub rewards: Vec<f64>,
    pub food_positions: Vec<(usize, usize)>,
    pub food_hps: Vec<u32>,
    pub food_remaining: usize,
    pub done: bool,
    /// Communication edges at the start of the step, as agent id pairs.
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

impl ReplayRecord {
    /// Snapshot of `world` right after `result` was produced by `actions`.
    pub fn capture(
        world: &GridWorld,
        actions: &[(usize, usize)],
        result: &StepResult,
        edges: Vec<(usize, usize)>,
    ) -> Self {
        let mut acts = vec![None; world.omnivores().len()];
        for &(a, i) in actions {
            acts[a] = Some(i);
        }
        Self {
            t: world.t(),
            positions: world.omnivores().iter().map(|u| u.pos).collect(),
            hps: world.omnivores().iter().map(|u| u.hp).collect(),
            alive: result.alive.clone(),
            actions: acts,
            rewards: result.rewards.clone(),
            food_positions: world.food().iter().map(|u| u.pos).collect(),
            food_hps: world.food().iter().map(|u| u.hp).collect(),
            food_remaining: result.food_remaining,
            done: result.done,
            edges,
        }
    }

    /// Team reward for this step, every agent weighted 1.
    pub fn team_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub fn write_replay<W: Write>(out: W, records: &[ReplayRecord]) -> Result<(), EnvError> {
    let mut out = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| EnvError::Replay(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| EnvError::Replay(e.to_string()))?;
    }
    out.flush().map_err(|e| EnvError::Replay(e.to_string()))
}

pub fn read_replay<R: Read>(input: R) -> Result<Vec<ReplayRecord>, EnvError> {
    let mut records = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| EnvError::Replay(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| EnvError::Replay(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(records)
}
