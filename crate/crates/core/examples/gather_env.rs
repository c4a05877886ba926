//! Plays one random episode of a Gather preset and prints what happens:
//! rewards per step, which interactions fired, and one agent's view.
//!
//! `cargo run --example gather_env -- [preset] [seed]`

use nvif_lab::env_gather::{decode_action, observe, Event, GridWorld, TaskConfig, ACTION_COUNT, OBS_CHANNELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHANNELS: [&str; OBS_CHANNELS] = ["obstacle", "omnivore", "omnivore hp", "food", "food hp", "x", "y"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "desk-random-12".into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let task = TaskConfig::preset(&name)?.with_seed(seed);
    println!(
        "{name}: {}x{} map, {} omnivores, {} food, {} steps, {}x{} view",
        task.map_size, task.map_size, task.n_omnivores, task.n_food, task.max_steps, task.window(), task.window()
    );

    let mut world = GridWorld::new(task.clone())?;
    let obs = observe(&world, 0)?;
    println!("agent 0 at {:?}, normalized {:?}", world.position(0)?, obs.position);
    for (c, label) in CHANNELS.iter().enumerate().take(5) {
        println!("  {label:>12}:");
        for row in 0..obs.window {
            let cells: Vec<String> = (0..obs.window).map(|col| format!("{:.1}", obs.at(c, row, col))).collect();
            println!("    {}", cells.join(" "));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut team_return, mut food_hits, mut blocked) = (0.0, 0, 0);
    while !world.done() {
        let actions: Vec<_> = world.alive_ids().into_iter().map(|i| (i, rng.random_range(0..ACTION_COUNT))).collect();
        if world.t() == 0 {
            let (a, i) = actions[0];
            println!("agent {a} first action {i}: {:?}", decode_action(i)?);
        }
        let r = world.step(&actions)?;
        team_return += r.rewards.iter().sum::<f64>();
        for e in &r.events {
            match e {
                Event::AttackFood { .. } => food_hits += 1,
                Event::Blocked { .. } => blocked += 1,
                _ => {}
            }
        }
    }
    println!(
        "done at t={} with {} food left; team return {team_return:.2}, {food_hits} hits on food, {blocked} blocked moves",
        world.t(),
        world.food_remaining()
    );
    Ok(())
}
