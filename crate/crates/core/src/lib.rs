pub mod diffcore;
pub mod env_gather;
pub mod commgraph;
pub mod nvif;
pub mod policy;
pub mod harness;
