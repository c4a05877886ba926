//! The Gather grid world.
//!
//! Omnivores (the learning agents) share a square map with stationary food
//! units. Attacks on food pay off; attacks on empty cells and on other
//! omnivores are penalised. Each step runs in three phases: simultaneous
//! attacks against the pre-step map, moves in a seeded random order, then
//! the per-step penalty.

mod action;
mod config;
mod observation;
mod replay;
mod world;

pub use action::{decode_action, encode_action, ActionKind, ACTION_COUNT, FIRST_ATTACK, NOOP};
pub use config::{RewardConfig, TaskConfig, TaskKind, PRESET_NAMES};
pub use observation::{normalized_position, observe, observe_into, Observation, OBS_CHANNELS};
pub use replay::{read_replay, write_replay, ReplayRecord};
pub use world::{AgentId, Cell, Event, GridWorld, StepResult, Unit, UnitKind};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid task config: {0}")]
    Config(String),
    #[error("action index {0} out of range (0..33)")]
    ActionOutOfRange(usize),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("agent {0} is dead or unknown")]
    DeadAgent(usize),
    #[error("replay: {0}")]
    Replay(String),
}
