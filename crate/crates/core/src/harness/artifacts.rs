use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Algorithm, HarnessError};
use crate::env_gather::TaskConfig;
use crate::nvif::{GraphMode, NvifModel, ObsCompressor};
use crate::policy::{make_source, ActorCritic, Featurizer, LatentSource, QLearner};

pub const COMPRESSOR_FILE: &str = "obs-vae.json";
pub const POLICY_FILE: &str = "policy.json";
pub const BUNDLE_FILE: &str = "bundle.json";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn encoder_path(dir: &Path, graph: GraphMode) -> PathBuf {
    dir.join(match graph {
        GraphMode::Neighbor => "nvif-neighbor.json",
        GraphMode::Complete => "nvif-complete.json",
        GraphMode::Edgeless => "nvif-edgeless.json",
    })
}

/// Fails with the "missing checkpoint" error if `path` does not exist.
pub(crate) fn require(path: &Path, hint: &str) -> Result<(), HarnessError> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingCheckpoint {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    ActorCritic,
    QNetwork,
}

/// Self-describing pointer to a trained policy and the frozen parts it was
/// trained with. Paths are relative to the bundle file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub algorithm: Algorithm,
    pub kind: PolicyKind,
    /// Preset the policy was trained on, or `custom`.
    pub task_name: String,
    pub task: TaskConfig,
    pub compressor: PathBuf,
    pub encoder: Option<PathBuf>,
    pub policy: PathBuf,
}

/// Everything needed to act: compressor, latent source and network.
pub(crate) struct LoadedPolicy {
    pub featurizer: Featurizer,
    pub source: Box<dyn LatentSource>,
    pub net: LoadedNet,
}

pub(crate) enum LoadedNet {
    ActorCritic(ActorCritic),
    QNetwork(QLearner),
}

impl PolicyBundle {
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        require(path, "train a policy first")?;
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub(crate) fn open(&self, bundle_path: &Path) -> Result<LoadedPolicy, HarnessError> {
        let base = bundle_path.parent().unwrap_or(Path::new("."));
        let compressor_path = Self::resolve(base, &self.compressor);
        require(&compressor_path, "run pretrain-obs first")?;
        let featurizer = Featurizer::new(ObsCompressor::load(&compressor_path)?);
        let encoder = match &self.encoder {
            Some(p) => {
                let p = Self::resolve(base, p);
                require(&p, "run pretrain-nvif first")?;
                Some(NvifModel::load(&p)?)
            }
            None => None,
        };
        let source = make_source(self.algorithm.latent_kind(), encoder, featurizer.width())?;
        let policy_path = Self::resolve(base, &self.policy);
        require(&policy_path, "train a policy first")?;
        let net = match self.kind {
            PolicyKind::ActorCritic => LoadedNet::ActorCritic(ActorCritic::load(&policy_path)?.0),
            PolicyKind::QNetwork => LoadedNet::QNetwork(QLearner::load(&policy_path)?),
        };
        let width = match &net {
            LoadedNet::ActorCritic(n) => n.input_width(),
            LoadedNet::QNetwork(q) => q.input_width(),
        };
        if width != featurizer.width() + source.width() {
            return Err(HarnessError::config(format!(
                "policy expects {width}-wide inputs, compressor and latent give {}",
                featurizer.width() + source.width()
            )));
        }
        Ok(LoadedPolicy { featurizer, source, net })
    }
}
