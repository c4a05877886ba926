//! Collects a random-policy corpus on desk-random-12, fits the observation
//! compressor, then pre-trains NVIF and prints the loss per epoch.
//!
//! `cargo run --release --example pretrain_nvif -- [epochs] [episodes]`

use std::time::Instant;

use nvif_lab::env_gather::TaskConfig;
use nvif_lab::nvif::{
    collect_random, encode_buffer, pretrain, NvifConfig, NvifModel, ObsCompressor, ObsVaeConfig,
    PretrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let episodes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let task = TaskConfig::preset("desk-random-12")?;

    let t0 = Instant::now();
    let buffer = collect_random(&task, episodes, 1)?;
    println!("collected {} agent-steps in {:.1?}", buffer.agent_steps(), t0.elapsed());

    let vae_cfg = ObsVaeConfig::default();
    let mut compressor = ObsCompressor::new(buffer.obs_len, &vae_cfg)?;
    let t0 = Instant::now();
    for (e, ep) in compressor.train(&buffer.all_obs(), &vae_cfg)?.iter().enumerate() {
        println!("obs-vae epoch {:>2}: recon {:.3} kl {:.3}", e + 1, ep.recon, ep.kl);
    }
    println!("obs-vae fitted in {:.1?}", t0.elapsed());
    let features = encode_buffer(&compressor, &buffer)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = NvifModel::new(NvifConfig::default(), buffer.obs_len, &mut rng)?;
    let cfg = PretrainConfig {
        epochs,
        ..PretrainConfig::default()
    };
    let t0 = Instant::now();
    let history = pretrain(&mut model, &buffer, &features, &cfg, |h| {
        let last = h.last().unwrap();
        println!(
            "epoch {:>3}: recon {:.4} kl {:.4} consistency {:.4} ({:.1?})",
            last.epoch,
            last.loss.recon,
            last.loss.kl,
            last.loss.consistency,
            t0.elapsed()
        );
        false
    })?;
    let (first, last) = (&history[0].loss, &history[history.len() - 1].loss);
    println!("recon ratio {:.3}, consistency {:.4} -> {:.4}", last.recon / first.recon, first.consistency, last.consistency);
    Ok(())
}
