//! Where each agent's auxiliary latent comes from.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::commgraph::{build_graph, complete_on, edgeless, normalize};
use crate::diffcore::Array;
use crate::nvif::{EncoderState, GraphMode, NvifModel};

/// Feeds the per-agent latent `ŝ` to the policy.
pub trait LatentSource {
    /// Latent width; zero means the policy sees observations only.
    fn width(&self) -> usize;

    /// Compressed-observation width the source consumes, if it reads them.
    fn feature_width(&self) -> Option<usize> {
        None
    }

    /// Called at the start of every episode.
    fn reset(&mut self);

    /// Latents for the alive agents `ids` (ascending) at grid positions
    /// `positions`, given their compressed observations `features`.
    fn latents(
        &mut self,
        ids: &[usize],
        positions: &[(usize, usize)],
        features: &Array,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array, PolicyError>;
}

/// No latent at all (IPPO).
#[derive(Clone, Copy, Debug, Default)]
pub struct EmptyLatent;

impl LatentSource for EmptyLatent {
    fn width(&self) -> usize {
        0
    }

    fn reset(&mut self) {}

    fn latents(&mut self, ids: &[usize], _: &[(usize, usize)], _: &Array, _: &mut ChaCha8Rng) -> Result<Array, PolicyError> {
        Ok(Array::zeros(&[ids.len(), 0]))
    }
}

/// Mean compressed observation of all alive agents, the same for everyone (MS).
#[derive(Clone, Copy, Debug)]
pub struct MeanLatent {
    pub width: usize,
}

impl LatentSource for MeanLatent {
    fn width(&self) -> usize {
        self.width
    }

    fn feature_width(&self) -> Option<usize> {
        Some(self.width)
    }

    fn reset(&mut self) {}

    fn latents(&mut self, ids: &[usize], _: &[(usize, usize)], features: &Array, _: &mut ChaCha8Rng) -> Result<Array, PolicyError> {
        let n = ids.len();
        if features.rows() != n || features.cols() != self.width {
            return Err(PolicyError::Config(format!(
                "mean latent expects {n}×{} features, got {:?}",
                self.width,
                features.shape()
            )));
        }
        let mut mean = vec![0.0; self.width];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n.max(1) as f64;
        }
        let data = (0..n).flat_map(|_| mean.iter().copied()).collect();
        Ok(Array::matrix(n, self.width, data))
    }
}

/// Frozen NVIF encoder; samples `ŝ ~ N(μ, σ²)` every step.
#[derive(Clone, Debug)]
pub struct NvifLatent {
    pub model: NvifModel,
    pub graph: GraphMode,
    state: EncoderState,
}

impl NvifLatent {
    pub fn new(model: NvifModel, graph: GraphMode) -> Self {
        let state = EncoderState::empty(model.config.d_h);
        Self { model, graph, state }
    }
}

impl LatentSource for NvifLatent {
    fn width(&self) -> usize {
        self.model.config.d_s
    }

    fn feature_width(&self) -> Option<usize> {
        Some(self.model.config.d_o)
    }

    fn reset(&mut self) {
        self.state = EncoderState::empty(self.model.config.d_h);
    }

    fn latents(
        &mut self,
        ids: &[usize],
        positions: &[(usize, usize)],
        features: &Array,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array, PolicyError> {
        let graph = match self.graph {
            GraphMode::Neighbor => build_graph(positions, ids)?,
            GraphMode::Complete => complete_on(ids)?,
            GraphMode::Edgeless => edgeless(ids)?,
        };
        let adj = Rc::new(normalize(&graph).to_sparse());
        let (state, dist) = self.model.encoder_step_with(features, &self.state, ids, &adj)?;
        self.state = state;
        Ok(dist.sample(rng))
    }
}

/// Which latent the policy receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentKind {
    /// NVIF over the neighbor graph.
    #[default]
    Nvif,
    /// Observations only.
    Ippo,
    /// Mean observation of all alive agents.
    Ms,
    /// NVIF over the complete graph.
    FullyVif,
}

impl LatentKind {
    pub fn needs_encoder(self) -> bool {
        matches!(self, LatentKind::Nvif | LatentKind::FullyVif)
    }

    pub fn name(self) -> &'static str {
        match self {
            LatentKind::Nvif => "nvif",
            LatentKind::Ippo => "ippo",
            LatentKind::Ms => "ms",
            LatentKind::FullyVif => "fully-vif",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [LatentKind::Nvif, LatentKind::Ippo, LatentKind::Ms, LatentKind::FullyVif]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

/// Builds the source for `kind`. `feature_width` is the compressed
/// observation width.
pub fn make_source(
    kind: LatentKind,
    encoder: Option<NvifModel>,
    feature_width: usize,
) -> Result<Box<dyn LatentSource>, PolicyError> {
    Ok(match kind {
        LatentKind::Ippo => Box::new(EmptyLatent),
        LatentKind::Ms => Box::new(MeanLatent { width: feature_width }),
        LatentKind::Nvif | LatentKind::FullyVif => {
            let model = encoder.ok_or_else(|| PolicyError::Config(format!("{} needs an encoder", kind.name())))?;
            if model.config.d_o != feature_width {
                return Err(PolicyError::Config(format!(
                    "encoder expects {}-wide features, compressor emits {feature_width}",
                    model.config.d_o
                )));
            }
            let graph = if kind == LatentKind::Nvif {
                GraphMode::Neighbor
            } else {
                GraphMode::Complete
            };
            Box::new(NvifLatent::new(model, graph))
        }
    })
}
