//! Pre-trains the information channel on a task and then runs PPO with the
//! chosen latent, printing one line per epoch.
//!
//! `cargo run --release --example train_ppo -- [task] [nvif|ippo|ms|fully-vif] [epochs] [seed] [cache dir]`
//!
//! The compressor and encoder are cached in the cache directory, so
//! repeated runs skip pre-training.

use std::path::PathBuf;
use std::time::Instant;

use nvif_lab::env_gather::TaskConfig;
use nvif_lab::nvif::{
    collect_random, encode_buffer, pretrain, GraphMode, NvifConfig, NvifModel, ObsCompressor, ObsVaeConfig,
    PretrainConfig,
};
use nvif_lab::policy::{make_source, train_nvif_ppo, Featurizer, LatentKind, PpoHyper};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let task_name = args.first().map_or("desk-normal-16", String::as_str);
    let kind = LatentKind::parse(args.get(1).map_or("nvif", String::as_str)).ok_or("unknown latent kind")?;
    let epochs: usize = args.get(2).map_or(Ok(250), |s| s.parse())?;
    let seed: u64 = args.get(3).map_or(Ok(0), |s| s.parse())?;
    let cache = PathBuf::from(args.get(4).map_or("target/nvif-cache", String::as_str));
    std::fs::create_dir_all(&cache)?;
    let task = TaskConfig::preset(task_name)?;

    let vae_path = cache.join(format!("{task_name}.obs-vae.json"));
    let graph = if kind == LatentKind::FullyVif { GraphMode::Complete } else { GraphMode::Neighbor };
    let enc_path = cache.join(format!("{task_name}.{graph:?}.nvif.json"));
    let compressor = if vae_path.exists() && (enc_path.exists() || !kind.needs_encoder()) {
        ObsCompressor::load(&vae_path)?
    } else {
        let t0 = Instant::now();
        let buffer = collect_random(&task, 100, 1)?;
        let cfg = ObsVaeConfig::default();
        let mut c = ObsCompressor::new(buffer.obs_len, &cfg)?;
        c.train(&buffer.all_obs(), &cfg)?;
        c.save(&vae_path)?;
        let feats = encode_buffer(&c, &buffer)?;
        let mut model = NvifModel::new(NvifConfig::default(), buffer.obs_len, &mut ChaCha8Rng::seed_from_u64(0))?;
        let pcfg = PretrainConfig { epochs: 10, graph, ..PretrainConfig::default() };
        let hist = pretrain(&mut model, &buffer, &feats, &pcfg, |_| false)?;
        model.save(&enc_path)?;
        println!("pre-trained in {:.1?}: recon {:.4} -> {:.4}", t0.elapsed(), hist[0].loss.recon, hist.last().unwrap().loss.recon);
        c
    };
    let encoder = if kind.needs_encoder() { Some(NvifModel::load(&enc_path)?) } else { None };
    let featurizer = Featurizer::new(compressor);
    let source = make_source(kind, encoder, featurizer.width())?;
    let hyper = PpoHyper { epochs, seed, ..PpoHyper::default() };
    let t0 = Instant::now();
    let (_, history) = train_nvif_ppo(&task, featurizer, source, &hyper, |m| {
        println!(
            "epoch {:>3} return {:>8.3} steps {:>6.2} food {:.3} actor {:+.4} critic {:.4} entropy {:.3} ({:.0?})",
            m.epoch, m.mean_return, m.mean_end_steps, m.food_eaten_frac, m.actor_obj, m.critic_loss, m.entropy, t0.elapsed()
        );
        false
    })?;
    println!("{} epochs in {:.1?}", history.len(), t0.elapsed());
    Ok(())
}
