//! Clipped surrogate objective and critic regression loss.

use super::network::ActorCritic;
use super::PolicyError;
use crate::diffcore::{Array, ParamStore, Tape, Var};

/// `min(ρA, clip(ρ, 1−ε, 1+ε)·A)` for one sample.
pub fn clip_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Flattened samples of one update step.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch {
    /// `m × (obs width + latent width)`.
    pub inputs: Array,
    pub actions: Vec<usize>,
    /// Behavior probability of each taken action.
    pub old_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> PpoBatch {
        PpoBatch {
            inputs: self.inputs.select_rows(idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_probs: idx.iter().map(|&i| self.old_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }

    /// Rescales advantages to zero mean and unit variance. Batches of one
    /// (or with constant advantages) are only centered.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n == 0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for a in &mut self.advantages {
            *a -= mean;
            if sd > 1e-8 {
                *a /= sd;
            }
        }
    }

    fn validate(&self) -> Result<(), PolicyError> {
        let m = self.len();
        if self.inputs.rows() != m || self.old_probs.len() != m || self.advantages.len() != m || self.returns.len() != m {
            return Err(PolicyError::Argument("batch columns have different lengths".into()));
        }
        if m == 0 {
            return Err(PolicyError::Argument("empty batch".into()));
        }
        if let Some(i) = self.old_probs.iter().position(|&p| !(p > 0.0)) {
            return Err(PolicyError::Data(format!(
                "sample {i} has behavior probability {}",
                self.old_probs[i]
            )));
        }
        Ok(())
    }
}

/// Tape handles of the actor objective.
#[derive(Clone, Copy, Debug)]
pub struct ActorTerms {
    /// Mean clipped surrogate.
    pub surrogate: Var,
    /// Mean policy entropy.
    pub entropy: Var,
    /// `surrogate + entropy_coef · entropy`, to be maximized.
    pub objective: Var,
}

pub fn ppo_actor_terms<'p>(
    tape: &mut Tape<'p>,
    net: &ActorCritic,
    store: &'p ParamStore,
    batch: &PpoBatch,
    eps: f64,
    entropy_coef: f64,
) -> Result<ActorTerms, PolicyError> {
    batch.validate()?;
    let m = batch.len();
    let x = tape.constant(batch.inputs.clone());
    let logits = net.logits_var(tape, store, x)?;
    let log_probs = tape.log_softmax(logits);
    let taken = tape.pick(log_probs, batch.actions.clone())?;
    let old = tape.constant(Array::matrix(m, 1, batch.old_probs.iter().map(|p| p.ln()).collect()));
    let log_ratio = tape.sub(taken, old)?;
    let ratio = tape.exp(log_ratio);
    let adv = tape.constant(Array::matrix(m, 1, batch.advantages.clone()));
    let unclipped = tape.mul(ratio, adv)?;
    let bounded = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let clipped = tape.mul(bounded, adv)?;
    let term = tape.minimum(unclipped, clipped)?;
    let surrogate = tape.mean(term);

    let probs = tape.exp(log_probs);
    let plogp = tape.mul(probs, log_probs)?;
    let total = tape.sum(plogp);
    let entropy = tape.scale(total, -1.0 / m as f64);

    let bonus = tape.scale(entropy, entropy_coef);
    let objective = tape.add(surrogate, bonus)?;
    Ok(ActorTerms {
        surrogate,
        entropy,
        objective,
    })
}

/// Value of the actor objective (surrogate plus entropy bonus).
pub fn ppo_actor_objective(net: &ActorCritic, batch: &PpoBatch, eps: f64, entropy_coef: f64) -> Result<f64, PolicyError> {
    let mut tape = Tape::new();
    let terms = ppo_actor_terms(&mut tape, net, &net.store, batch, eps, entropy_coef)?;
    Ok(tape.value(terms.objective).item())
}

/// `mean (V(o, ŝ) − ξ)²` on the tape.
pub fn critic_loss_var<'p>(
    tape: &mut Tape<'p>,
    net: &ActorCritic,
    store: &'p ParamStore,
    inputs: &Array,
    returns: &[f64],
) -> Result<Var, PolicyError> {
    if inputs.rows() != returns.len() {
        return Err(PolicyError::Argument("inputs and returns differ in length".into()));
    }
    let x = tape.constant(inputs.clone());
    let v = net.value_var(tape, store, x)?;
    let target = tape.constant(Array::matrix(returns.len(), 1, returns.to_vec()));
    Ok(tape.mse(v, target)?)
}

pub fn critic_loss(net: &ActorCritic, inputs: &Array, returns: &[f64]) -> Result<f64, PolicyError> {
    let mut tape = Tape::new();
    let l = critic_loss_var(&mut tape, net, &net.store, inputs, returns)?;
    Ok(tape.value(l).item())
}
