use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diffcore::Moments;
use crate::env_gather::{TaskConfig, PRESET_NAMES};
use crate::nvif::{GraphMode, NvifConfig, ObsVaeConfig, PretrainConfig};
use crate::policy::{DqnHyper, LatentKind, PpoHyper};

/// Training algorithm of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    NvifPpo,
    Ippo,
    Ms,
    FullyVif,
    NvifDqn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::NvifPpo,
        Algorithm::Ippo,
        Algorithm::Ms,
        Algorithm::FullyVif,
        Algorithm::NvifDqn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NvifPpo => "nvif-ppo",
            Algorithm::Ippo => "ippo",
            Algorithm::Ms => "ms",
            Algorithm::FullyVif => "fully-vif",
            Algorithm::NvifDqn => "nvif-dqn",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn latent_kind(self) -> LatentKind {
        match self {
            Algorithm::NvifPpo | Algorithm::NvifDqn => LatentKind::Nvif,
            Algorithm::Ippo => LatentKind::Ippo,
            Algorithm::Ms => LatentKind::Ms,
            Algorithm::FullyVif => LatentKind::FullyVif,
        }
    }

    /// Graph the encoder is pre-trained and run on.
    pub fn graph(self) -> GraphMode {
        if self == Algorithm::FullyVif {
            GraphMode::Complete
        } else {
            GraphMode::Neighbor
        }
    }

    pub fn needs_encoder(self) -> bool {
        self.latent_kind().needs_encoder()
    }
}

/// Encoder pre-training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NvifBlock {
    pub model: NvifConfig,
    pub obs_vae: ObsVaeConfig,
    /// `graph` is ignored; the algorithm decides it.
    pub pretrain: PretrainConfig,
    /// Random-policy episodes collected for pre-training.
    pub corpus_episodes: usize,
    pub corpus_seed: u64,
}

impl Default for NvifBlock {
    fn default() -> Self {
        Self {
            model: NvifConfig::default(),
            obs_vae: ObsVaeConfig::default(),
            pretrain: PretrainConfig::default(),
            corpus_episodes: 200,
            corpus_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalBlock {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self { episodes: 10, seed: 0 }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct RawConfig {
    task: String,
    env: serde_json::Value,
    algorithm: String,
    seeds: Vec<u64>,
    output_dir: PathBuf,
    checkpoint_every: usize,
    nvif: NvifBlock,
    ppo: PpoHyper,
    dqn: DqnHyper,
    diffcore: Moments,
    eval: EvalBlock,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            task: "desk-normal-16".into(),
            env: serde_json::Value::Null,
            algorithm: Algorithm::NvifPpo.name().into(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 10,
            nvif: NvifBlock::default(),
            ppo: PpoHyper::default(),
            dqn: DqnHyper::default(),
            diffcore: Moments::default(),
            eval: EvalBlock::default(),
        }
    }
}

/// A validated experiment description.
///
/// `task` names a preset (or `custom`, meaning the built-in defaults) and
/// `env` overrides individual task fields. The `diffcore` optimizer moments
/// are copied into every training block.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub task_name: String,
    pub task: TaskConfig,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Epochs between policy checkpoints while training.
    pub checkpoint_every: usize,
    pub nvif: NvifBlock,
    pub ppo: PpoHyper,
    pub dqn: DqnHyper,
    pub diffcore: Moments,
    pub eval: EvalBlock,
}

fn deserialize_tracking<'de, T: Deserialize<'de>>(
    de: impl serde::Deserializer<'de>,
    prefix: &str,
    unknown: &mut Vec<String>,
) -> Result<T, String> {
    serde_ignored::deserialize(de, |path| {
        let p = path.to_string();
        unknown.push(if prefix.is_empty() { p } else { format!("{prefix}.{p}") });
    })
    .map_err(|e| e.to_string())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parses and validates; every unknown key and out-of-range value is
    /// reported in one [`HarnessError::Config`].
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let mut unknown = Vec::new();
        let raw: RawConfig = deserialize_tracking(&mut serde_json::Deserializer::from_str(text), "", &mut unknown)
            .map_err(HarnessError::config)?;
        let mut problems: Vec<String> = unknown.into_iter().map(|k| format!("{k}: unknown key")).collect();

        let task = Self::resolve_task(&raw.task, &raw.env, &mut problems);
        let algorithm = Algorithm::parse(&raw.algorithm);
        if algorithm.is_none() {
            let known: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
            problems.push(format!("algorithm: unknown value {:?} (known: {})", raw.algorithm, known.join(", ")));
        }
        if raw.seeds.is_empty() {
            problems.push("seeds: at least one seed is required".into());
        }
        if raw.checkpoint_every == 0 {
            problems.push("checkpoint_every: must be positive".into());
        }
        if raw.eval.episodes == 0 {
            problems.push("eval.episodes: must be positive".into());
        }
        let nv = &raw.nvif;
        if nv.model.d_o != nv.obs_vae.d_o {
            problems.push(format!(
                "nvif.model.d_o: {} differs from nvif.obs_vae.d_o = {}",
                nv.model.d_o, nv.obs_vae.d_o
            ));
        }
        for (key, v) in [
            ("nvif.corpus_episodes", nv.corpus_episodes),
            ("nvif.obs_vae.epochs", nv.obs_vae.epochs),
            ("nvif.obs_vae.batch", nv.obs_vae.batch),
            ("nvif.pretrain.epochs", nv.pretrain.epochs),
            ("nvif.pretrain.batch_episodes", nv.pretrain.batch_episodes),
            ("nvif.model.d_o", nv.model.d_o),
            ("nvif.model.d_h", nv.model.d_h),
            ("nvif.model.d_s", nv.model.d_s),
            ("nvif.model.layers", nv.model.layers),
        ] {
            if v == 0 {
                problems.push(format!("{key}: must be positive"));
            }
        }
        if !(nv.model.alpha >= 0.0) {
            problems.push(format!("nvif.model.alpha: {} must be nonnegative", nv.model.alpha));
        }
        for (key, lr) in [("nvif.obs_vae.lr", nv.obs_vae.lr), ("nvif.pretrain.lr", nv.pretrain.lr)] {
            if !(lr > 0.0) {
                problems.push(format!("{key}: {lr} must be positive"));
            }
        }
        problems.extend(raw.diffcore.problems().into_iter().map(|p| format!("diffcore.{p}")));
        problems.extend(raw.ppo.problems().into_iter().map(|p| format!("ppo.{p}")));
        problems.extend(raw.dqn.problems().into_iter().map(|p| format!("dqn.{p}")));

        match (task, algorithm) {
            (Some(task), Some(algorithm)) if problems.is_empty() => {
                let mut nvif = raw.nvif;
                nvif.pretrain.graph = algorithm.graph();
                nvif.obs_vae.moments = raw.diffcore;
                nvif.pretrain.moments = raw.diffcore;
                let mut ppo = raw.ppo;
                ppo.moments = raw.diffcore;
                let mut dqn = raw.dqn;
                dqn.moments = raw.diffcore;
                Ok(Self {
                    task_name: raw.task,
                    task,
                    algorithm,
                    seeds: raw.seeds,
                    output_dir: raw.output_dir,
                    checkpoint_every: raw.checkpoint_every,
                    nvif,
                    ppo,
                    dqn,
                    diffcore: raw.diffcore,
                    eval: raw.eval,
                })
            }
            _ => Err(HarnessError::Config(problems)),
        }
    }

    fn resolve_task(name: &str, env: &serde_json::Value, problems: &mut Vec<String>) -> Option<TaskConfig> {
        let base = if name == "custom" {
            TaskConfig::default()
        } else {
            match TaskConfig::preset(name) {
                Ok(t) => t,
                Err(_) => {
                    problems.push(format!("task: unknown preset {name:?} (known: custom, {})", PRESET_NAMES.join(", ")));
                    return None;
                }
            }
        };
        let mut merged = serde_json::to_value(&base).expect("task config serializes");
        match env {
            serde_json::Value::Null => {}
            serde_json::Value::Object(over) => merge(&mut merged, over),
            _ => {
                problems.push("env: must be an object".into());
                return None;
            }
        }
        let mut unknown = Vec::new();
        let task: Result<TaskConfig, _> = deserialize_tracking(merged, "env", &mut unknown);
        problems.extend(unknown.into_iter().map(|k| format!("{k}: unknown key")));
        let task = match task {
            Ok(t) => t,
            Err(e) => {
                problems.push(format!("env: {e}"));
                return None;
            }
        };
        if let Err(e) = task.validate() {
            problems.push(format!("env: {e}"));
            return None;
        }
        Some(task)
    }

    /// Seed-specific PPO settings.
    pub fn ppo_for(&self, seed: u64) -> PpoHyper {
        PpoHyper { seed, ..self.ppo.clone() }
    }

    pub fn dqn_for(&self, seed: u64) -> DqnHyper {
        DqnHyper { seed, ..self.dqn.clone() }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed-{seed}"))
    }
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Map<String, serde_json::Value>) {
    let Some(obj) = base.as_object_mut() else { return };
    for (k, v) in over {
        match (obj.get_mut(k), v) {
            (Some(slot @ serde_json::Value::Object(_)), serde_json::Value::Object(inner)) => merge(slot, inner),
            _ => {
                obj.insert(k.clone(), v.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problems(json: &str) -> Vec<String> {
        match ExperimentConfig::from_json(json) {
            Err(HarnessError::Config(p)) => p,
            other => panic!("expected a configuration error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_resolve() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c.task, TaskConfig::preset("desk-normal-16").unwrap());
        assert_eq!(c.algorithm, Algorithm::NvifPpo);
    }

    #[test]
    fn env_overrides_preset_fields() {
        let c = ExperimentConfig::from_json(r#"{"task": "desk-random-12", "env": {"max_steps": 40, "rewards": {"r_food": 2.0}}}"#)
            .unwrap();
        assert_eq!(c.task.max_steps, 40);
        assert_eq!(c.task.rewards.r_food, 2.0);
        assert_eq!(c.task.rewards.p_blank, TaskConfig::preset("desk-random-12").unwrap().rewards.p_blank);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let p = problems(r#"{"bogus": 1, "ppo": {"gama": 0.9}, "env": {"mapsize": 3}, "diffcore": {"beta3": 0}}"#);
        for key in ["bogus", "ppo.gama", "env.mapsize", "diffcore.beta3"] {
            assert!(p.iter().any(|m| m.starts_with(key)), "{key} missing from {p:?}");
        }
    }

    #[test]
    fn unknown_algorithm_and_preset() {
        let p = problems(r#"{"algorithm": "dgn", "task": "huge"}"#);
        assert!(p.iter().any(|m| m.starts_with("algorithm")));
        assert!(p.iter().any(|m| m.starts_with("task")));
    }

    #[test]
    fn range_problems_name_their_keys() {
        let p = problems(r#"{"ppo": {"clip": 2.0}, "seeds": [], "nvif": {"model": {"d_o": 8}}}"#);
        assert!(p.iter().any(|m| m.starts_with("ppo.clip")));
        assert!(p.iter().any(|m| m.starts_with("seeds")));
        assert!(p.iter().any(|m| m.starts_with("nvif.model.d_o")));
    }

    #[test]
    fn moments_propagate() {
        let c = ExperimentConfig::from_json(r#"{"diffcore": {"beta1": 0.8}}"#).unwrap();
        assert_eq!(c.ppo.moments.beta1, 0.8);
        assert_eq!(c.dqn.moments.beta1, 0.8);
        assert_eq!(c.nvif.pretrain.moments.beta1, 0.8);
    }
}
