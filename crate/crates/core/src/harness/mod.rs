//! Experiment orchestration: configuration files, artifact layout,
//! evaluation, the cross-task scalability matrix and the command-line
//! front end's command bodies.
//!
//! Artifacts of one experiment live under its output directory:
//!
//! ```text
//! obs-vae.json            observation compressor
//! nvif-neighbor.json      encoder pre-trained on neighbor graphs
//! nvif-complete.json      encoder pre-trained on complete graphs (fully-vif)
//! pretrain-nvif.csv       per-epoch encoder losses
//! seed-<s>/policy.json    trained policy (actor-critic or Q-network)
//! seed-<s>/bundle.json    everything `eval` needs to rebuild the policy
//! seed-<s>/metrics.csv    per-epoch training metrics
//! eval.json, matrix.csv, replay.jsonl
//! ```

mod artifacts;
mod commands;
mod config;
mod evaluate;
mod scalability;

pub use artifacts::{encoder_path, PolicyBundle, PolicyKind, BUNDLE_FILE, COMPRESSOR_FILE, METRICS_FILE, POLICY_FILE};
pub use commands::{pretrain_nvif, pretrain_obs, read_replay_dump, replay_dump, scalability, train, TrainOptions};
pub use config::{Algorithm, EvalBlock, ExperimentConfig, NvifBlock};
pub use evaluate::{evaluate, evaluate_policy, metrics_from_replay, EvalPolicy, EvalReport};
pub use scalability::{normalize_columns, ScalabilityMatrix};

use std::path::PathBuf;

use thiserror::Error;

use crate::env_gather::EnvError;
use crate::nvif::NvifError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid configuration; one entry per offending key.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("missing checkpoint {}: {hint}", .path.display())]
    MissingCheckpoint { path: PathBuf, hint: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Nvif(#[from] NvifError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::MissingCheckpoint { .. } => 2,
            _ => 3,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(vec![msg.into()])
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
