//! Communication graphs between omnivores.

mod graph;
mod info;

pub use graph::{
    block_diagonal, build_graph, complete_on, edgeless, fully_connected, normalize, NeighborGraph,
    NormalizedAdjacency,
};
pub use info::{info_direct, info_recursive, info_unrolled, initial_sets, InfoSet, InfoStep};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph needs at least one agent")]
    Empty,
    #[error("two agents share a position")]
    DuplicatePosition,
    #[error("agent ids are not unique")]
    DuplicateId,
    #[error("{positions} positions for {ids} ids")]
    LengthMismatch { positions: usize, ids: usize },
    #[error("agent {0} is not in the graph")]
    UnknownAgent(usize),
    #[error("history covers {got} timesteps, need {needed}")]
    History { needed: usize, got: usize },
    #[error("no previous collection for agent {0}")]
    MissingState(usize),
}
