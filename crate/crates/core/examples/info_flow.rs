//! Builds the nearest-neighbor communication graph along a random episode
//! and tracks which (agent, timestep) messages each agent has heard, both
//! by the closed form and by the step-by-step recursion.
//!
//! `cargo run --example info_flow -- [steps]`

use nvif_lab::commgraph::{build_graph, info_direct, info_recursive, initial_sets, normalize};
use nvif_lab::env_gather::{GridWorld, TaskConfig, ACTION_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    let mut world = GridWorld::new(TaskConfig::preset("desk-random-12")?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut history = Vec::new();
    for _ in 0..steps {
        let ids = world.alive_ids();
        let pos = ids.iter().map(|&i| world.position(i)).collect::<Result<Vec<_>, _>>()?;
        history.push(build_graph(&pos, &ids)?);
        let actions: Vec<_> = ids.iter().map(|&i| (i, rng.random_range(0..ACTION_COUNT))).collect();
        world.step(&actions)?;
    }

    let g = &history[0];
    println!("t=0 edges {:?} (connected: {})", g.edges(), g.is_connected());
    let a = normalize(g);
    for i in 0..a.n() {
        let row: Vec<String> = (0..a.n()).map(|j| format!("{:.3}", a.get(i, j))).collect();
        println!("  Â[{i}] = [{}]", row.join(", "));
    }

    let mut state = initial_sets(&history[0]);
    for (t, graph) in history.iter().enumerate() {
        let step = info_recursive(&state, graph, t)?;
        state = step.into_iter().map(|(i, s)| (i, s.next)).collect();
        let direct = info_direct(&history, 0, t)?;
        assert_eq!(state[&0], direct);
        println!("after t={t}, agent 0 knows {} messages: {:?}", direct.len(), direct);
    }
    Ok(())
}
