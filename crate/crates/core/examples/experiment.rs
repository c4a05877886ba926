//! Runs a whole experiment from a JSON configuration, the same way the
//! `nvif-lab` binary does: compressor, encoder, PPO training with
//! checkpoints, then evaluation of the trained bundle.
//!
//! `cargo run --release --example experiment -- [config.json]`
//!
//! Without an argument a small built-in configuration is used.

use nvif_lab::harness::{self, evaluate, EvalPolicy, ExperimentConfig, TrainOptions, BUNDLE_FILE};

const SMALL: &str = r#"{
    "task": "desk-random-12",
    "algorithm": "nvif-ppo",
    "seeds": [0],
    "output_dir": "target/experiment",
    "checkpoint_every": 5,
    "nvif": {"corpus_episodes": 40, "pretrain": {"epochs": 5}},
    "ppo": {"epochs": 20},
    "eval": {"episodes": 5}
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::from_json(SMALL)?,
    };
    println!("{} on {} -> {}", cfg.algorithm.name(), cfg.task_name, cfg.output_dir.display());
    let vae = harness::pretrain_obs(&cfg)?;
    println!("compressor recon {:.3} -> {:.3}", vae[0].recon, vae.last().unwrap().recon);
    if cfg.algorithm.needs_encoder() {
        let enc = harness::pretrain_nvif(&cfg)?;
        println!("encoder recon {:.4} -> {:.4}", enc[0].loss.recon, enc.last().unwrap().loss.recon);
    }
    for (seed, metrics) in harness::train(&cfg, TrainOptions::default())? {
        if let Some(m) = metrics.last() {
            println!("seed {seed}: {} epochs, last return {:.2}, food {:.3}", m.epoch, m.mean_return, m.food_eaten_frac);
        }
        let bundle = cfg.seed_dir(seed).join(BUNDLE_FILE);
        let r = evaluate(&EvalPolicy::Bundle(bundle), &cfg.task, cfg.eval.episodes, cfg.eval.seed)?;
        println!("seed {seed} evaluation: {r:?}");
    }
    Ok(())
}
