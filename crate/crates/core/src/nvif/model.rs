use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::NvifError;
use crate::commgraph::{normalize, NeighborGraph};
use crate::diffcore::checkpoint::{load_store, save_store};
use crate::diffcore::{
    Array, DiffError, GruCell, Linear, ParamStore, SparseMatrix, Tape, TwoLayerMlp, Var,
    LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};

/// Network widths and the consistency weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NvifConfig {
    /// Width of the compressed observation feature.
    pub d_o: usize,
    /// Hidden state width.
    pub d_h: usize,
    /// Latent width.
    pub d_s: usize,
    /// GCN layers per FlowNet, i.e. communication rounds per timestep.
    pub layers: usize,
    pub decoder_hidden: usize,
    /// Weight of the consistency term.
    pub alpha: f64,
}

impl Default for NvifConfig {
    fn default() -> Self {
        Self {
            d_o: 32,
            d_h: 64,
            d_s: 32,
            layers: 2,
            decoder_hidden: 64,
            alpha: 0.1,
        }
    }
}

/// Width of the position side input of the decoder.
pub const POSITION_WIDTH: usize = 2;

/// Stacked bias-free GCN layers, `H ← ReLU(Â H W)`.
#[derive(Clone, Debug)]
pub struct FlowNet {
    pub layers: Vec<Linear>,
}

impl FlowNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let layers = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { d_in } else { d_out };
                Linear::new(store, &format!("{name}.g{l}"), fan_in, d_out, false, rng)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn existing(store: &ParamStore, name: &str, layers: usize) -> Result<Self, DiffError> {
        let layers = (0..layers)
            .map(|l| Linear::existing(store, &format!("{name}.g{l}"), false))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
        adj: &Rc<SparseMatrix>,
    ) -> Result<Var, DiffError> {
        let mut h = x;
        for layer in &self.layers {
            let hw = layer.forward(tape, store, h)?;
            let mixed = tape.sparse_matmul(Rc::clone(adj), hw)?;
            h = tape.relu(mixed);
        }
        Ok(h)
    }
}

/// Per-agent hidden state, rows aligned with `ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub ids: Vec<usize>,
    pub hidden: Array,
}

impl EncoderState {
    /// Zero state over no agents; agents get a zero row when first seen.
    pub fn empty(d_h: usize) -> Self {
        Self {
            ids: Vec::new(),
            hidden: Array::zeros(&[0, d_h]),
        }
    }

    /// Row of each id of `ids` in this state, if any.
    pub fn alignment(&self, ids: &[usize]) -> Vec<Option<usize>> {
        let lookup: HashMap<usize, usize> =
            self.ids.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        ids.iter().map(|i| lookup.get(i).copied()).collect()
    }
}

/// `N(μ, σ²)` per agent, rows aligned with `ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub ids: Vec<usize>,
    pub mu: Array,
    pub log_sigma: Array,
}

impl LatentDistribution {
    pub fn sigma(&self) -> Array {
        self.log_sigma.map(f64::exp)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array {
        let mut out = self.mu.clone();
        for (o, &ls) in out.data_mut().iter_mut().zip(self.log_sigma.data()) {
            let eps: f64 = rng.sample(StandardNormal);
            *o += ls.exp() * eps;
        }
        out
    }
}

/// Tape handles produced by one encoder step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub hidden: Var,
    pub mu: Var,
    /// Already clamped.
    pub log_sigma: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub flow_o: FlowNet,
    pub flow_h: FlowNet,
    pub gru: GruCell,
    pub head_mu: Linear,
    pub head_log_sigma: Linear,
}

impl Encoder {
    /// One encoder step on the tape. `obs` is `n×d_o`; `hidden` is the
    /// previous state already aligned to the same `n` rows.
    ///
    /// The flow part `φ` (mixed observations) is the GRU input and the
    /// recurrent part `ψ` (mixed previous states) sits on its hidden path.
    pub fn step_var<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        obs: Var,
        hidden: Var,
        adj: &Rc<SparseMatrix>,
    ) -> Result<StepVars, DiffError> {
        let phi = self.flow_o.forward(tape, store, obs, adj)?;
        let psi = self.flow_h.forward(tape, store, hidden, adj)?;
        let h = self.gru.forward(tape, store, phi, psi)?;
        let mu = self.head_mu.forward(tape, store, h)?;
        let ls = self.head_log_sigma.forward(tape, store, h)?;
        let ls = tape.clamp(ls, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok(StepVars {
            hidden: h,
            mu,
            log_sigma: ls,
        })
    }
}

/// The full NVIF network: encoder plus observation decoder, with its
/// parameters.
#[derive(Clone, Debug)]
pub struct NvifModel {
    pub config: NvifConfig,
    pub obs_len: usize,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: TwoLayerMlp,
}

impl NvifModel {
    pub fn new<R: Rng + ?Sized>(config: NvifConfig, obs_len: usize, rng: &mut R) -> Result<Self, NvifError> {
        if config.layers == 0 || config.d_o == 0 || config.d_h == 0 || config.d_s == 0 {
            return Err(NvifError::Config("widths and layer count must be positive".into()));
        }
        let mut store = ParamStore::new();
        let s = &mut store;
        let encoder = Encoder {
            flow_o: FlowNet::new(s, "flow_o", config.d_o, config.d_h, config.layers, rng)?,
            flow_h: FlowNet::new(s, "flow_h", config.d_h, config.d_h, config.layers, rng)?,
            gru: GruCell::new(s, "gru", config.d_h, config.d_h, rng)?,
            head_mu: Linear::new(s, "head.mu", config.d_h, config.d_s, true, rng)?,
            head_log_sigma: Linear::new(s, "head.log_sigma", config.d_h, config.d_s, true, rng)?,
        };
        let decoder = TwoLayerMlp::new(
            s,
            "decoder",
            config.d_s + POSITION_WIDTH,
            config.decoder_hidden,
            obs_len,
            rng,
        )?;
        Ok(Self {
            config,
            obs_len,
            store,
            encoder,
            decoder,
        })
    }

    fn from_store(config: NvifConfig, obs_len: usize, store: ParamStore) -> Result<Self, NvifError> {
        let encoder = Encoder {
            flow_o: FlowNet::existing(&store, "flow_o", config.layers)?,
            flow_h: FlowNet::existing(&store, "flow_h", config.layers)?,
            gru: GruCell::existing(&store, "gru")?,
            head_mu: Linear::existing(&store, "head.mu", true)?,
            head_log_sigma: Linear::existing(&store, "head.log_sigma", true)?,
        };
        let decoder = TwoLayerMlp::existing(&store, "decoder")?;
        if decoder.fan_out() != obs_len {
            return Err(NvifError::Config(format!(
                "decoder emits {} values, checkpoint says {obs_len}",
                decoder.fan_out()
            )));
        }
        Ok(Self {
            config,
            obs_len,
            store,
            encoder,
            decoder,
        })
    }

    pub fn save(&self, manifest: &Path) -> Result<(), NvifError> {
        let meta = serde_json::json!({
            "kind": "nvif",
            "config": self.config,
            "obs_len": self.obs_len,
        });
        Ok(save_store(&self.store, manifest, meta)?)
    }

    pub fn load(manifest: &Path) -> Result<Self, NvifError> {
        let (store, meta) = load_store(manifest)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("nvif") {
            return Err(NvifError::Config(format!("{} is not an NVIF checkpoint", manifest.display())));
        }
        let config: NvifConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| NvifError::Config(e.to_string()))?;
        let obs_len = meta["obs_len"]
            .as_u64()
            .ok_or_else(|| NvifError::Config("checkpoint lacks obs_len".into()))? as usize;
        Self::from_store(config, obs_len, store)
    }

    /// See [`Encoder::step_var`].
    pub fn step_var<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        obs: Var,
        hidden: Var,
        adj: &Rc<SparseMatrix>,
    ) -> Result<StepVars, DiffError> {
        self.encoder.step_var(tape, store, obs, hidden, adj)
    }

    /// Decoder on the tape: `sigmoid(MLP([ŝ ∥ x]))`.
    pub fn decode_var<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        latent: Var,
        position: Var,
    ) -> Result<Var, DiffError> {
        let input = tape.concat(&[latent, position])?;
        let logits = self.decoder.forward(tape, store, input)?;
        Ok(tape.sigmoid(logits))
    }

    /// One inference step outside of training.
    ///
    /// `obs_feats` rows follow `graph.ids()`. Agents missing from `state`
    /// start from zero; agents in `state` but not in the graph are dropped.
    pub fn encoder_step(
        &self,
        obs_feats: &Array,
        state: &EncoderState,
        graph: &NeighborGraph,
    ) -> Result<(EncoderState, LatentDistribution), NvifError> {
        let adj = Rc::new(normalize(graph).to_sparse());
        self.encoder_step_with(obs_feats, state, graph.ids(), &adj)
    }

    /// As [`Self::encoder_step`] with a prebuilt (possibly block-diagonal)
    /// adjacency over `ids`.
    pub fn encoder_step_with(
        &self,
        obs_feats: &Array,
        state: &EncoderState,
        ids: &[usize],
        adj: &Rc<SparseMatrix>,
    ) -> Result<(EncoderState, LatentDistribution), NvifError> {
        let n = ids.len();
        if obs_feats.rows() != n || adj.rows() != n {
            return Err(NvifError::Protocol(format!(
                "{} feature rows and a {}-node graph for {n} agents",
                obs_feats.rows(),
                adj.rows()
            )));
        }
        if obs_feats.cols() != self.config.d_o {
            return Err(NvifError::Config(format!(
                "features have width {}, encoder expects {}",
                obs_feats.cols(),
                self.config.d_o
            )));
        }
        let d_h = self.config.d_h;
        let mut prev = Array::zeros(&[n, d_h]);
        for (r, src) in state.alignment(ids).into_iter().enumerate() {
            if let Some(src) = src {
                prev.row_mut(r).copy_from_slice(state.hidden.row(src));
            }
        }
        let mut tape = Tape::new();
        let o = tape.constant_ref(obs_feats);
        let h = tape.constant(prev);
        let out = self.step_var(&mut tape, &self.store, o, h, adj)?;
        Ok((
            EncoderState {
                ids: ids.to_vec(),
                hidden: tape.value(out.hidden).clone(),
            },
            LatentDistribution {
                ids: ids.to_vec(),
                mu: tape.value(out.mu).clone(),
                log_sigma: tape.value(out.log_sigma).clone(),
            },
        ))
    }

    /// Reconstructed observations for latents `n×d_s` and positions `n×2`.
    pub fn decode(&self, latent: &Array, positions: &Array) -> Result<Array, NvifError> {
        let mut tape = Tape::new();
        let s = tape.constant_ref(latent);
        let x = tape.constant_ref(positions);
        let y = self.decode_var(&mut tape, &self.store, s, x)?;
        Ok(tape.value(y).clone())
    }
}
