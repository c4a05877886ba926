//! Scores the random and no-op baselines on several presets and prints the
//! column-normalized cross-task matrix.
//!
//! `cargo run --release --example baselines -- [episodes]`

use nvif_lab::env_gather::TaskConfig;
use nvif_lab::harness::{evaluate, normalize_columns, EvalPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let tasks = ["desk-random-12", "desk-normal-16", "desk-random-16"];
    let policies = [("random", EvalPolicy::Random), ("noop", EvalPolicy::Noop)];
    let mut raw = Vec::new();
    for (label, p) in &policies {
        let mut row = Vec::new();
        for name in tasks {
            let r = evaluate(p, &TaskConfig::preset(name)?, episodes, 0)?;
            println!(
                "{label:>6} on {name}: return {:>8.2} steps {:>6.1} food {:.3}",
                r.mean_return, r.mean_end_steps, r.food_eaten_frac
            );
            row.push(r.mean_return);
        }
        raw.push(row);
    }
    println!("\n{:>8} {}", "", tasks.join("  "));
    for ((label, _), row) in policies.iter().zip(normalize_columns(&raw)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>14.3}")).collect();
        println!("{label:>8} {}", cells.join(""));
    }
    Ok(())
}
