//! Trains the value-based variant: a shared Q-network over compressed
//! observations and NVIF latents, with experience replay and a target
//! network.
//!
//! `cargo run --release --example train_dqn -- [episodes]`

use nvif_lab::env_gather::TaskConfig;
use nvif_lab::nvif::{collect_random, encode_buffer, pretrain, NvifConfig, NvifModel, ObsCompressor, ObsVaeConfig, PretrainConfig};
use nvif_lab::policy::{make_source, train_nvif_dqn, DqnHyper, Featurizer, LatentKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(60);
    let task = TaskConfig::preset("desk-random-12")?;
    let buffer = collect_random(&task, 30, 1)?;
    let vcfg = ObsVaeConfig::default();
    let mut compressor = ObsCompressor::new(buffer.obs_len, &vcfg)?;
    compressor.train(&buffer.all_obs(), &vcfg)?;
    let features = encode_buffer(&compressor, &buffer)?;
    let mut model = NvifModel::new(NvifConfig::default(), buffer.obs_len, &mut ChaCha8Rng::seed_from_u64(0))?;
    pretrain(&mut model, &buffer, &features, &PretrainConfig { epochs: 5, ..PretrainConfig::default() }, |_| false)?;

    let featurizer = Featurizer::new(compressor);
    let mut source = make_source(LatentKind::Nvif, Some(model), featurizer.width())?;
    let hyper = DqnHyper {
        episodes,
        warmup: 500,
        eps_decay_steps: 10_000,
        target_sync: 500,
        ..DqnHyper::default()
    };
    let (_, history) = train_nvif_dqn(&task, &featurizer, source.as_mut(), &hyper)?;
    for e in history.iter().filter(|e| e.episode % 10 == 0 || e.episode == 1) {
        println!(
            "episode {:>3} ε {:.3} return {:>8.2} steps {:>3} food {:.2}",
            e.episode, e.epsilon, e.team_return, e.end_steps, e.food_eaten_frac
        );
    }
    Ok(())
}
