//! Neighboring variational information flow.
//!
//! Each timestep every alive agent mixes its neighbors' compressed
//! observations and previous hidden states through two GCN stacks, feeds
//! both into a GRU, and reads a Gaussian latent off the new hidden state.
//! The latent is trained to reconstruct the agent's own view given only its
//! position, while a consistency penalty pulls the agents' latents
//! together. After pre-training the encoder is frozen and its latent is an
//! extra input for the policy.

mod buffer;
mod compressor;
mod losses;
mod model;
mod pretrain;

pub use buffer::{capture_step, collect_random, episode_seed, Episode, EpisodeStep, PretrainBuffer};
pub use compressor::{holdout_split, ObsCompressor, ObsVaeConfig, ObsVaeEpoch};
pub use losses::{
    bce, consistency_sum_var, kl_divergence, kl_sum_var, loss_consistency, loss_variational,
    NvifLossReport,
};
pub use model::{
    Encoder, EncoderState, FlowNet, LatentDistribution, NvifConfig, NvifModel, StepVars,
    POSITION_WIDTH,
};
pub use pretrain::{
    batch_loss, encode_buffer, evaluate_loss, pretrain, BatchLoss, FeatureCache, GraphMode,
    PretrainConfig, PretrainEpoch,
};

use thiserror::Error;

use crate::commgraph::GraphError;
use crate::diffcore::DiffError;
use crate::env_gather::EnvError;

#[derive(Debug, Error)]
pub enum NvifError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("bad data: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("observation compressor has not been trained")]
    Untrained,
}
