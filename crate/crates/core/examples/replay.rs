//! Writes evaluation episodes as JSON lines, reads them back and recomputes
//! the evaluation metrics from the records alone.
//!
//! `cargo run --example replay -- [out.jsonl]`

use std::path::PathBuf;

use nvif_lab::env_gather::TaskConfig;
use nvif_lab::harness::{metrics_from_replay, read_replay_dump, replay_dump, EvalPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/replay.jsonl".into()));
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let task = TaskConfig::preset("desk-random-12")?;
    let live = replay_dump(&EvalPolicy::Random, &task, 3, 0, &out)?;
    let episodes = read_replay_dump(&out)?;
    let replayed = metrics_from_replay(&episodes)?;
    println!("live:     {live:?}");
    println!("replayed: {replayed:?}");
    let last = episodes[0].last().expect("episodes are non-empty");
    println!(
        "episode 0 ends at t={} with {} food left and {} communication edges",
        last.t,
        last.food_remaining,
        last.edges.len()
    );
    Ok(())
}
