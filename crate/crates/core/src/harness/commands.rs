use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifacts::{require, encoder_path, PolicyBundle, PolicyKind, BUNDLE_FILE, COMPRESSOR_FILE, METRICS_FILE, POLICY_FILE};
use super::evaluate::{evaluate, evaluate_policy, EvalPolicy, EvalReport};
use super::scalability::ScalabilityMatrix;
use super::{Algorithm, ExperimentConfig, HarnessError};
use crate::env_gather::{ReplayRecord, TaskConfig};
use crate::nvif::{collect_random, encode_buffer, pretrain, NvifModel, ObsCompressor, ObsVaeEpoch, PretrainEpoch};
use crate::policy::{make_source, read_metrics, train_nvif_dqn, write_metrics, EpochMetrics, Featurizer, LatentSource, PpoTrainer};

fn csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let io = |e: csv::Error| HarnessError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Fits the observation compressor on a random-policy corpus and writes
/// `obs-vae.json` and `pretrain-obs.csv`.
pub fn pretrain_obs(cfg: &ExperimentConfig) -> Result<Vec<ObsVaeEpoch>, HarnessError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let buffer = collect_random(&cfg.task, cfg.nvif.corpus_episodes, cfg.nvif.corpus_seed)?;
    let mut compressor = ObsCompressor::new(buffer.obs_len, &cfg.nvif.obs_vae)?;
    let history = compressor.train(&buffer.all_obs(), &cfg.nvif.obs_vae)?;
    compressor.save(&cfg.output_dir.join(COMPRESSOR_FILE))?;
    csv_rows(&cfg.output_dir.join("pretrain-obs.csv"), &history)?;
    Ok(history)
}

#[derive(Serialize)]
struct PretrainRow {
    epoch: usize,
    recon: f64,
    kl: f64,
    consistency: f64,
    total: f64,
}

/// Pre-trains the encoder on the graph the configured algorithm uses.
/// Needs the compressor written by [`pretrain_obs`].
pub fn pretrain_nvif(cfg: &ExperimentConfig) -> Result<Vec<PretrainEpoch>, HarnessError> {
    let compressor_path = cfg.output_dir.join(COMPRESSOR_FILE);
    require(&compressor_path, "run pretrain-obs first")?;
    let compressor = ObsCompressor::load(&compressor_path)?;
    let buffer = collect_random(&cfg.task, cfg.nvif.corpus_episodes, cfg.nvif.corpus_seed)?;
    let features = encode_buffer(&compressor, &buffer)?;
    let mut init = ChaCha8Rng::seed_from_u64(cfg.nvif.pretrain.seed);
    init.set_stream(1);
    let mut model = NvifModel::new(cfg.nvif.model.clone(), buffer.obs_len, &mut init)?;
    let history = pretrain(&mut model, &buffer, &features, &cfg.nvif.pretrain, |_| false)?;
    let path = encoder_path(&cfg.output_dir, cfg.nvif.pretrain.graph);
    model.save(&path)?;
    let rows: Vec<PretrainRow> = history
        .iter()
        .map(|e| PretrainRow {
            epoch: e.epoch,
            recon: e.loss.recon,
            kl: e.loss.kl,
            consistency: e.loss.consistency,
            total: e.loss.total,
        })
        .collect();
    csv_rows(&path.with_extension("csv"), &rows)?;
    Ok(history)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `seed-<s>/policy.json` if it exists.
    pub resume: bool,
    /// Stop (and checkpoint) once this many epochs are complete.
    pub stop_after: Option<usize>,
}

fn frozen_parts(cfg: &ExperimentConfig) -> Result<(Featurizer, Box<dyn LatentSource>, Option<PathBuf>), HarnessError> {
    let compressor_path = cfg.output_dir.join(COMPRESSOR_FILE);
    require(&compressor_path, "run pretrain-obs first")?;
    let featurizer = Featurizer::new(ObsCompressor::load(&compressor_path)?);
    let (encoder, enc_path) = if cfg.algorithm.needs_encoder() {
        let p = encoder_path(&cfg.output_dir, cfg.algorithm.graph());
        require(&p, "run pretrain-nvif first")?;
        (Some(NvifModel::load(&p)?), Some(p))
    } else {
        (None, None)
    };
    let source = make_source(cfg.algorithm.latent_kind(), encoder, featurizer.width())?;
    Ok((featurizer, source, enc_path))
}

/// Path of an output-directory artifact as seen from a seed directory.
fn from_seed_dir(p: &Path) -> PathBuf {
    PathBuf::from("..").join(p.file_name().expect("artifact paths name a file"))
}

/// Trains one policy per configured seed. PPO runs append one metrics row
/// per epoch and checkpoint every `checkpoint_every` epochs; with
/// `resume`, rows past the checkpoint are dropped and training continues,
/// which reproduces an uninterrupted run exactly.
pub fn train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<Vec<(u64, Vec<EpochMetrics>)>, HarnessError> {
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (featurizer, mut source, enc_path) = frozen_parts(cfg)?;
        let dir = cfg.seed_dir(seed);
        std::fs::create_dir_all(&dir)?;
        let (policy_path, metrics_path) = (dir.join(POLICY_FILE), dir.join(METRICS_FILE));
        let kind = if cfg.algorithm == Algorithm::NvifDqn {
            let hyper = cfg.dqn_for(seed);
            let (q, episodes) = train_nvif_dqn(&cfg.task, &featurizer, source.as_mut(), &hyper)?;
            q.save(&policy_path)?;
            csv_rows(&metrics_path, &episodes)?;
            out.push((seed, Vec::new()));
            PolicyKind::QNetwork
        } else {
            let mut trainer = PpoTrainer::new(cfg.task.clone(), featurizer, source, cfg.ppo_for(seed))?;
            if opts.resume && policy_path.exists() {
                trainer.resume(&policy_path)?;
                let kept: Vec<EpochMetrics> = if metrics_path.exists() {
                    read_metrics(&metrics_path)?.into_iter().filter(|m| m.epoch <= trainer.epoch).collect()
                } else {
                    Vec::new()
                };
                std::fs::remove_file(&metrics_path).ok();
                write_metrics(&metrics_path, &kept)?;
            } else {
                std::fs::remove_file(&metrics_path).ok();
            }
            let target = opts.stop_after.map_or(cfg.ppo.epochs, |s| s.min(cfg.ppo.epochs));
            while trainer.epoch < target {
                let m = trainer.run_epoch()?;
                write_metrics(&metrics_path, &[m])?;
                if trainer.epoch % cfg.checkpoint_every == 0 {
                    trainer.save(&policy_path)?;
                }
            }
            trainer.save(&policy_path)?;
            out.push((seed, read_metrics(&metrics_path)?));
            PolicyKind::ActorCritic
        };
        let bundle_path = dir.join(BUNDLE_FILE);
        let bundle = PolicyBundle {
            algorithm: cfg.algorithm,
            kind,
            task_name: cfg.task_name.clone(),
            task: cfg.task.clone(),
            compressor: from_seed_dir(Path::new(COMPRESSOR_FILE)),
            encoder: enc_path.as_deref().map(from_seed_dir),
            policy: PathBuf::from(POLICY_FILE),
        };
        bundle.save(&bundle_path)?;
    }
    Ok(out)
}

/// Evaluates every policy in `policies` on every task in `tasks` and
/// writes the normalized matrix to `out`.
pub fn scalability(
    policies: &[PathBuf],
    tasks: &[(String, TaskConfig)],
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<ScalabilityMatrix, HarnessError> {
    let mut rows = Vec::with_capacity(policies.len());
    let mut raw = Vec::with_capacity(policies.len());
    for p in policies {
        rows.push(PolicyBundle::load(p)?.task_name);
        let returns = tasks
            .iter()
            .map(|(_, task)| Ok(evaluate(&EvalPolicy::Bundle(p.clone()), task, episodes, seed)?.mean_return))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        raw.push(returns);
    }
    let m = ScalabilityMatrix::new(rows, tasks.iter().map(|(n, _)| n.clone()).collect(), raw)?;
    m.write_csv(out)?;
    Ok(m)
}

/// One line of a replay dump.
#[derive(Serialize, Deserialize)]
struct ReplayLine {
    episode: usize,
    #[serde(flatten)]
    record: ReplayRecord,
}

/// Plays `episodes` evaluation episodes and writes every step as one JSON
/// line tagged with its episode index.
pub fn replay_dump(
    policy: &EvalPolicy,
    task: &TaskConfig,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<EvalReport, HarnessError> {
    let mut replay = Vec::new();
    let report = evaluate_policy(policy, task, episodes, seed, Some(&mut replay))?;
    let mut w = BufWriter::new(File::create(out)?);
    for (episode, records) in replay.into_iter().enumerate() {
        for record in records {
            serde_json::to_writer(&mut w, &ReplayLine { episode, record })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(report)
}

/// Reads a file written by [`replay_dump`], grouped by episode.
pub fn read_replay_dump(path: &Path) -> Result<Vec<Vec<ReplayRecord>>, HarnessError> {
    let mut episodes: Vec<Vec<ReplayRecord>> = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: ReplayLine =
            serde_json::from_str(&line).map_err(|e| HarnessError::Io(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if l.episode >= episodes.len() {
            episodes.resize_with(l.episode + 1, Vec::new);
        }
        episodes[l.episode].push(l.record);
    }
    Ok(episodes)
}
