//! Advantage and return estimates for one agent's trajectory.
//!
//! `rewards[t]` is the reward that followed the action taken at `t`, so it
//! plays the role of `r_{t+1}`.

use super::PolicyError;

/// `A_t = Σ_{l≥0} (γλ)^l δ_{t+l}` with `δ_t = r_{t+1} + γ V_{t+1} − V_t`.
///
/// `values` carries one extra bootstrap entry at the end (0 for a finished
/// episode).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, PolicyError> {
    if values.len() != rewards.len() + 1 {
        return Err(PolicyError::Argument(format!(
            "{} rewards need {} values, got {}",
            rewards.len(),
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// `ξ_t = r_{t+1} + γ ξ_{t+1}`, zero after the last step.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}
