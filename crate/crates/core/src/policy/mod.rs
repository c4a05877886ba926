//! Reinforcement learning on top of a frozen information channel.
//!
//! Every agent feeds `[compressed observation ∥ latent]` into one shared
//! actor-critic (or Q-network) and learns from its own reward. The latent
//! comes from a [`LatentSource`]: the NVIF encoder, nothing at all (IPPO),
//! the mean observation (MS) or NVIF over the complete graph (Fully-VIF).

mod advantage;
mod alignment;
mod dqn;
mod latent;
mod network;
mod objective;
mod ppo;
mod rollout;
mod toy;

pub use advantage::{compute_gae, compute_returns};
pub use alignment::{alignment_check, AlignmentReport};
pub use dqn::{epsilon_at, q_target, train_nvif_dqn, DqnEpisode, DqnHyper, QLearner, ReplayMemory, Transition};
pub use latent::{make_source, EmptyLatent, LatentKind, LatentSource, MeanLatent, NvifLatent};
pub use network::{sample_action, softmax, ActorCritic, NetworkConfig};
pub use objective::{clip_term, critic_loss, critic_loss_var, ppo_actor_objective, ppo_actor_terms, ActorTerms, PpoBatch};
pub use ppo::{
    episode_rng, read_metrics, train_nvif_ppo, write_metrics, EpochMetrics, PpoHyper, PpoTrainer,
};
pub use rollout::{hstack, run_episode, AgentTrajectory, Controller, EpisodeStats, Featurizer, RolloutBuffer};
pub use toy::{ToyMdp, ToyStep};

use thiserror::Error;

use crate::commgraph::GraphError;
use crate::diffcore::DiffError;
use crate::env_gather::EnvError;
use crate::nvif::NvifError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("data corruption: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Nvif(#[from] NvifError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<std::io::Error> for PolicyError {
    fn from(e: std::io::Error) -> Self {
        PolicyError::Io(e.to_string())
    }
}
