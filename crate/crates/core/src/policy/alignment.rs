//! Sign agreement between agent-specific and team policy gradients.
//!
//! For an additive task with team reward `Σ ω_i r_i`, the team advantage is
//! `Ã = Σ ω_i A_i`. The agent-specific update moves the shared policy along
//! `Σ_i α_i A_i ∇log π_i`, the team update along `Σ_i α_i Ã ∇log π_i`; their
//! inner product is approximated by `(Σ ω A)(Σ A)` once the per-agent
//! likelihood-ratio terms are taken as equal.

use serde::{Deserialize, Serialize};

use super::PolicyError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `(Σ_i α_i · Σ_j ω_j A_j) · (Σ_i α_i A_i)`.
    pub dot_exact: f64,
    /// `(Σ ω_i A_i) · (Σ A_i)`.
    pub dot_approx: f64,
    pub equal_weights: bool,
    /// `dot_approx ≥ 0`; guaranteed whenever `equal_weights` holds.
    pub sign_ok: bool,
    /// `Ṽ = Σ ω_i V_i`.
    pub team_value: f64,
    /// `Ã = Σ ω_i A_i`.
    pub team_advantage: f64,
}

pub fn alignment_check(
    advantages: &[f64],
    weights: &[f64],
    clipped_ratios: &[f64],
    values: &[f64],
) -> Result<AlignmentReport, PolicyError> {
    let n = advantages.len();
    if weights.len() != n || clipped_ratios.len() != n || values.len() != n {
        return Err(PolicyError::Argument("per-agent inputs differ in length".into()));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0)) {
        return Err(PolicyError::Domain(format!("weight {w} is not positive")));
    }
    let team_advantage: f64 = weights.iter().zip(advantages).map(|(w, a)| w * a).sum();
    let team_value: f64 = weights.iter().zip(values).map(|(w, v)| w * v).sum();
    let sum_alpha: f64 = clipped_ratios.iter().sum();
    let alpha_a: f64 = clipped_ratios.iter().zip(advantages).map(|(c, a)| c * a).sum();
    let sum_a: f64 = advantages.iter().sum();
    let dot_approx = team_advantage * sum_a;
    Ok(AlignmentReport {
        dot_exact: sum_alpha * team_advantage * alpha_a,
        dot_approx,
        equal_weights: weights.iter().all(|&w| w == weights[0]),
        sign_ok: dot_approx >= 0.0,
        team_value,
        team_advantage,
    })
}
