//! Observation VAE that squeezes raw local views into short features.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{bce, kl_sum_var};
use super::NvifError;
use crate::diffcore::checkpoint::{load_store, save_store};
use crate::diffcore::{gaussian_sample, Adam, Array, Linear, Moments, ParamStore, Tape, TwoLayerMlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsVaeConfig {
    /// Feature width.
    pub d_o: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub moments: Moments,
    pub seed: u64,
}

impl Default for ObsVaeConfig {
    fn default() -> Self {
        Self {
            d_o: 32,
            hidden: 128,
            lr: 1e-3,
            epochs: 8,
            batch: 128,
            moments: Moments::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsVaeEpoch {
    /// Summed-over-cells BCE per observation.
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct ObsCompressor {
    pub obs_len: usize,
    pub d_o: usize,
    pub store: ParamStore,
    trunk: Linear,
    mu: Linear,
    log_sigma: Linear,
    decoder: TwoLayerMlp,
    trained: bool,
}

impl ObsCompressor {
    pub fn new(obs_len: usize, config: &ObsVaeConfig) -> Result<Self, NvifError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        Ok(Self {
            obs_len,
            d_o: config.d_o,
            trunk: Linear::new(s, "obsvae.trunk", obs_len, config.hidden, true, &mut rng)?,
            mu: Linear::new(s, "obsvae.mu", config.hidden, config.d_o, true, &mut rng)?,
            log_sigma: Linear::new(s, "obsvae.log_sigma", config.hidden, config.d_o, true, &mut rng)?,
            decoder: TwoLayerMlp::new(s, "obsvae.decoder", config.d_o, config.hidden, obs_len, &mut rng)?,
            store,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Fits the VAE on `rows` (flattened observations). The objective is
    /// the usual per-observation ELBO, BCE summed over cells.
    pub fn train(&mut self, rows: &[f32], config: &ObsVaeConfig) -> Result<Vec<ObsVaeEpoch>, NvifError> {
        let n = rows.len() / self.obs_len;
        if n == 0 {
            return Err(NvifError::Data("no observations to fit".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
        let opt = Adam::new(config.lr, config.moments);
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
            for chunk in order.chunks(config.batch.max(1)) {
                let mut data = Vec::with_capacity(chunk.len() * self.obs_len);
                for &r in chunk {
                    data.extend(rows[r * self.obs_len..(r + 1) * self.obs_len].iter().map(|&v| v as f64));
                }
                let batch = Array::matrix(chunk.len(), self.obs_len, data);
                let grads = {
                    let mut tape = Tape::new();
                    let s = &self.store;
                    let x = tape.constant(batch);
                    let h = self.trunk.forward(&mut tape, s, x)?;
                    let h = tape.relu(h);
                    let mu = self.mu.forward(&mut tape, s, h)?;
                    let ls = self.log_sigma.forward(&mut tape, s, h)?;
                    let ls = tape.clamp(ls, crate::diffcore::LOG_SIGMA_MIN, crate::diffcore::LOG_SIGMA_MAX);
                    let z = gaussian_sample(&mut tape, mu, ls, &mut rng)?;
                    let logits = self.decoder.forward(&mut tape, s, z)?;
                    let pred = tape.sigmoid(logits);
                    let recon = tape.bce_sum(x, pred)?;
                    let kl = kl_sum_var(&mut tape, mu, ls);
                    let both = tape.add(recon, kl)?;
                    let loss = tape.scale(both, 1.0 / chunk.len() as f64);
                    recon_sum += tape.value(recon).item();
                    kl_sum += tape.value(kl).item();
                    tape.backward(loss)?
                };
                self.store.zero_grad();
                self.store.accumulate(&grads);
                opt.step(&mut self.store);
            }
            history.push(ObsVaeEpoch {
                recon: recon_sum / n as f64,
                kl: kl_sum / n as f64,
            });
        }
        self.trained = true;
        Ok(history)
    }

    /// Posterior means for `rows` (each `obs_len` wide).
    pub fn compress(&self, rows: &Array) -> Result<Array, NvifError> {
        if !self.trained {
            return Err(NvifError::Untrained);
        }
        if rows.cols() != self.obs_len {
            return Err(NvifError::Config(format!(
                "observation width {} but compressor expects {}",
                rows.cols(),
                self.obs_len
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant_ref(rows);
        let h = self.trunk.forward(&mut tape, &self.store, x)?;
        let h = tape.relu(h);
        let mu = self.mu.forward(&mut tape, &self.store, h)?;
        Ok(tape.value(mu).clone())
    }

    /// Compresses `f32` rows.
    pub fn compress_f32(&self, rows: &[f32]) -> Result<Array, NvifError> {
        let n = rows.len() / self.obs_len.max(1);
        self.compress(&Array::matrix(n, self.obs_len, rows.iter().map(|&v| v as f64).collect()))
    }

    /// Mean per-cell BCE of decoding the posterior mean.
    pub fn reconstruction_bce(&self, rows: &Array) -> Result<f64, NvifError> {
        let feats = self.compress(rows)?;
        let mut tape = Tape::new();
        let z = tape.constant(feats);
        let logits = self.decoder.forward(&mut tape, &self.store, z)?;
        let pred = tape.sigmoid(logits);
        Ok(bce(rows.data(), tape.value(pred).data()))
    }

    pub fn save(&self, manifest: &Path) -> Result<(), NvifError> {
        if !self.trained {
            return Err(NvifError::Untrained);
        }
        let meta = serde_json::json!({ "kind": "obs-vae", "obs_len": self.obs_len, "d_o": self.d_o });
        Ok(save_store(&self.store, manifest, meta)?)
    }

    pub fn load(manifest: &Path) -> Result<Self, NvifError> {
        let (store, meta) = load_store(manifest)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("obs-vae") {
            return Err(NvifError::Config(format!("{} is not an obs-VAE checkpoint", manifest.display())));
        }
        let trunk = Linear::existing(&store, "obsvae.trunk", true)?;
        let mu = Linear::existing(&store, "obsvae.mu", true)?;
        Ok(Self {
            obs_len: trunk.fan_in,
            d_o: mu.fan_out,
            log_sigma: Linear::existing(&store, "obsvae.log_sigma", true)?,
            decoder: TwoLayerMlp::existing(&store, "obsvae.decoder")?,
            trunk,
            mu,
            store,
            trained: true,
        })
    }
}

/// Draws a random subset of `n` row indices out of `total`, sorted.
pub fn holdout_split<R: Rng + ?Sized>(total: usize, n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(rng);
    let mut held: Vec<usize> = idx[..n.min(total)].to_vec();
    let mut rest: Vec<usize> = idx[n.min(total)..].to_vec();
    held.sort_unstable();
    rest.sort_unstable();
    (rest, held)
}
