//! Fits the observation compressor on random-policy views and reports its
//! held-out reconstruction error against the coin-flip baseline ln 2.
//!
//! `cargo run --release --example obs_compressor -- [preset] [episodes]`

use nvif_lab::diffcore::Array;
use nvif_lab::env_gather::TaskConfig;
use nvif_lab::nvif::{collect_random, holdout_split, ObsCompressor, ObsVaeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "desk-random-12".into());
    let episodes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let task = TaskConfig::preset(&name)?;
    let buffer = collect_random(&task, episodes, 1)?;
    let rows = buffer.all_obs();
    let len = buffer.obs_len;
    let n = rows.len() / len;
    let (train, test) = holdout_split(n, n / 5, &mut ChaCha8Rng::seed_from_u64(0));
    let gather = |idx: &[usize]| -> Vec<f32> { idx.iter().flat_map(|&r| rows[r * len..(r + 1) * len].iter().copied()).collect() };

    let cfg = ObsVaeConfig::default();
    let mut c = ObsCompressor::new(len, &cfg)?;
    for (e, ep) in c.train(&gather(&train), &cfg)?.iter().enumerate() {
        println!("epoch {:>2}: recon {:.3} kl {:.3}", e + 1, ep.recon, ep.kl);
    }
    let held = gather(&test);
    let held = Array::matrix(test.len(), len, held.iter().map(|&v| v as f64).collect());
    let bce = c.reconstruction_bce(&held)?;
    println!("{len}-cell views -> {} features; held-out per-cell BCE {bce:.4} (ln 2 = {:.4})", cfg.d_o, std::f64::consts::LN_2);
    let f = c.compress(&held)?;
    println!("first feature row: {:.3?}", &f.row(0)[..8.min(f.cols())]);
    Ok(())
}
