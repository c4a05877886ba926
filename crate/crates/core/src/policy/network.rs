//! Shared actor and critic networks.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::diffcore::checkpoint::{load_store, save_store};
use crate::diffcore::{Array, DiffError, ParamStore, Tape, TwoLayerMlp, Var};
use crate::env_gather::ACTION_COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

/// Softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Draws an action from `softmax(logits)`; returns it with its probability.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64), PolicyError> {
    if logits.is_empty() {
        return Err(PolicyError::Argument("no logits".into()));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(PolicyError::Numeric("non-finite logit".into()));
    }
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &pa) in p.iter().enumerate() {
        acc += pa;
        if u < acc {
            return Ok((a, pa));
        }
    }
    // u landed in the rounding slack above the last cumulative sum.
    let a = p.iter().rposition(|&pa| pa > 0.0).unwrap_or(p.len() - 1);
    Ok((a, p[a]))
}

/// Actor `π(·|o, ŝ)` over the 33 actions and critic `V(o, ŝ)`, two layers
/// each, shared by all agents.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub obs_width: usize,
    pub latent_width: usize,
    pub store: ParamStore,
    pub actor: TwoLayerMlp,
    pub critic: TwoLayerMlp,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        obs_width: usize,
        latent_width: usize,
        config: &NetworkConfig,
        rng: &mut R,
    ) -> Result<Self, PolicyError> {
        let input = obs_width + latent_width;
        let mut store = ParamStore::new();
        let actor = TwoLayerMlp::new(&mut store, "actor", input, config.hidden, ACTION_COUNT, rng)?;
        let critic = TwoLayerMlp::new(&mut store, "critic", input, config.hidden, 1, rng)?;
        Ok(Self {
            obs_width,
            latent_width,
            store,
            actor,
            critic,
        })
    }

    pub fn input_width(&self) -> usize {
        self.obs_width + self.latent_width
    }

    pub fn logits_var<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, DiffError> {
        self.actor.forward(tape, store, x)
    }

    pub fn value_var<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var, DiffError> {
        self.critic.forward(tape, store, x)
    }

    fn check_width(&self, inputs: &Array) -> Result<(), PolicyError> {
        if inputs.cols() != self.input_width() {
            return Err(PolicyError::Config(format!(
                "policy input has width {}, network expects {}",
                inputs.cols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, inputs: &Array) -> Result<Array, PolicyError> {
        self.check_width(inputs)?;
        let mut tape = Tape::new();
        let x = tape.constant_ref(inputs);
        let l = self.logits_var(&mut tape, &self.store, x)?;
        Ok(tape.value(l).clone())
    }

    /// Action probabilities, one row per input row.
    pub fn probabilities(&self, inputs: &Array) -> Result<Array, PolicyError> {
        let logits = self.logits(inputs)?;
        let mut out = Vec::with_capacity(logits.len());
        for r in 0..logits.rows() {
            if logits.row(r).iter().any(|l| !l.is_finite()) {
                return Err(PolicyError::Numeric("non-finite logit".into()));
            }
            out.extend(softmax(logits.row(r)));
        }
        Ok(Array::matrix(logits.rows(), logits.cols(), out))
    }

    pub fn values(&self, inputs: &Array) -> Result<Vec<f64>, PolicyError> {
        self.check_width(inputs)?;
        let mut tape = Tape::new();
        let x = tape.constant_ref(inputs);
        let v = self.value_var(&mut tape, &self.store, x)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Samples one action per row; returns `(action, probability)` pairs.
    pub fn act<R: Rng + ?Sized>(&self, inputs: &Array, rng: &mut R) -> Result<Vec<(usize, f64)>, PolicyError> {
        let logits = self.logits(inputs)?;
        (0..logits.rows()).map(|r| sample_action(logits.row(r), rng)).collect()
    }

    /// Actions, their probabilities and the critic's values in one pass.
    pub fn act_and_value<R: Rng + ?Sized>(
        &self,
        inputs: &Array,
        rng: &mut R,
    ) -> Result<(Vec<(usize, f64)>, Vec<f64>), PolicyError> {
        self.check_width(inputs)?;
        let mut tape = Tape::new();
        let x = tape.constant_ref(inputs);
        let l = self.logits_var(&mut tape, &self.store, x)?;
        let v = self.value_var(&mut tape, &self.store, x)?;
        let logits = tape.value(l);
        let acts = (0..logits.rows())
            .map(|r| sample_action(logits.row(r), rng))
            .collect::<Result<_, _>>()?;
        Ok((acts, tape.value(v).data().to_vec()))
    }

    pub fn save(&self, manifest: &Path, extra: serde_json::Value) -> Result<(), PolicyError> {
        let meta = serde_json::json!({
            "kind": "actor-critic",
            "obs_width": self.obs_width,
            "latent_width": self.latent_width,
            "extra": extra,
        });
        Ok(save_store(&self.store, manifest, meta)?)
    }

    /// Loads a checkpoint; returns the network and the `extra` metadata.
    pub fn load(manifest: &Path) -> Result<(Self, serde_json::Value), PolicyError> {
        let (store, meta) = load_store(manifest)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("actor-critic") {
            return Err(PolicyError::Config(format!("{} is not a policy checkpoint", manifest.display())));
        }
        let width = |k: &str| {
            meta.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| PolicyError::Config(format!("checkpoint lacks {k}")))
        };
        let (obs_width, latent_width) = (width("obs_width")?, width("latent_width")?);
        let actor = TwoLayerMlp::existing(&store, "actor")?;
        let critic = TwoLayerMlp::existing(&store, "critic")?;
        if actor.fan_in() != obs_width + latent_width || actor.fan_out() != ACTION_COUNT {
            return Err(PolicyError::Config("actor shape disagrees with checkpoint metadata".into()));
        }
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((
            Self {
                obs_width,
                latent_width,
                store,
                actor,
                critic,
            },
            extra,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, p) = sample_action(&[0.0; ACTION_COUNT], &mut rng).unwrap();
        assert!((p - 1.0 / 33.0).abs() < 1e-15);
    }

    #[test]
    fn dominant_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut logits = [0.0; ACTION_COUNT];
        logits[7] = 20.0;
        for _ in 0..100 {
            let (a, p) = sample_action(&logits, &mut rng).unwrap();
            assert_eq!(a, 7);
            assert!(p > 0.999);
        }
    }

    #[test]
    fn non_finite_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(sample_action(&[0.0, f64::NAN], &mut rng), Err(PolicyError::Numeric(_))));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ActorCritic::new(5, 3, &NetworkConfig::default(), &mut rng).unwrap();
        let x = Array::matrix(4, 8, (0..32).map(|i| (i as f64 * 0.37).sin()).collect());
        let p = net.probabilities(&x).unwrap();
        for r in 0..4 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(matches!(net.values(&Array::zeros(&[1, 7])), Err(PolicyError::Config(_))));
    }
}
