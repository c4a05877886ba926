//! Reconstruction, KL and consistency terms, on the tape and as plain
//! numbers.

use serde::{Deserialize, Serialize};

use super::NvifError;
use crate::diffcore::{Array, DiffError, Tape, Var, BCE_CLAMP};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NvifLossReport {
    pub recon: f64,
    pub kl: f64,
    pub consistency: f64,
    pub total: f64,
    pub alpha: f64,
}

impl NvifLossReport {
    pub fn new(recon: f64, kl: f64, consistency: f64, alpha: f64) -> Self {
        Self {
            recon,
            kl,
            consistency,
            total: recon + kl + alpha * consistency,
            alpha,
        }
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ_d (μ² + σ² − 1 − 2 log σ)` for one agent.
pub fn kl_divergence(mu: &[f64], log_sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_sigma)
        .map(|(&m, &ls)| m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls)
        .sum::<f64>()
}

/// Mean over cells of the clamped binary cross-entropy.
pub fn bce(target: &[f64], pred: &[f64]) -> f64 {
    let n = target.len().max(1) as f64;
    -target
        .iter()
        .zip(pred)
        .map(|(&t, &p)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n
}

/// `(recon, kl)` over a batch of agents: per-agent BCE and KL, averaged.
pub fn loss_variational(
    targets: &Array,
    reconstructions: &Array,
    mu: &Array,
    log_sigma: &Array,
) -> Result<(f64, f64), NvifError> {
    let n = targets.rows();
    if n == 0 {
        return Err(NvifError::Data("empty batch".into()));
    }
    if reconstructions.shape() != targets.shape() || mu.shape() != log_sigma.shape() || mu.rows() != n {
        return Err(DiffError::Shape {
            op: "loss_variational",
            left: targets.shape().to_vec(),
            right: mu.shape().to_vec(),
        }
        .into());
    }
    let recon = (0..n).map(|i| bce(targets.row(i), reconstructions.row(i))).sum::<f64>() / n as f64;
    let kl = (0..n).map(|i| kl_divergence(mu.row(i), log_sigma.row(i))).sum::<f64>() / n as f64;
    Ok((recon, kl))
}

/// `(1/n) Σ_i ‖ŝ_i − mean_j ŝ_j‖²`, summed over latent dimensions.
pub fn loss_consistency(latents: &Array) -> f64 {
    let n = latents.rows();
    if n == 0 {
        return 0.0;
    }
    let d = latents.cols();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(latents.row(i)) {
            *m += v / n as f64;
        }
    }
    (0..n)
        .map(|i| {
            latents
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64
}

/// Sum over rows of the per-agent KL, on the tape.
pub fn kl_sum_var(tape: &mut Tape<'_>, mu: Var, log_sigma: Var) -> Var {
    let mu2 = tape.square(mu);
    let two_ls = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu2, var).expect("same shape");
    let b = tape.sub(a, two_ls).expect("same shape");
    let c = tape.affine(b, 0.5, -0.5);
    tape.sum(c)
}

/// Sum over rows of `‖ŝ_i − group mean‖²`, with `groups[i]` naming the
/// episode (or any other unit of averaging) of row `i`.
pub fn consistency_sum_var(tape: &mut Tape<'_>, latent: Var, groups: Vec<usize>) -> Result<Var, DiffError> {
    let centered = tape.group_center(latent, groups)?;
    let sq = tape.square(centered);
    Ok(tape.sum(sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_divergence(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!((kl_divergence(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn consistency_cases() {
        assert_eq!(loss_consistency(&Array::matrix(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0])), 0.0);
        assert_eq!(loss_consistency(&Array::matrix(2, 1, vec![0.0, 2.0])), 1.0);
        assert_eq!(loss_consistency(&Array::matrix(1, 3, vec![4.0, 5.0, 6.0])), 0.0);
    }

    #[test]
    fn tape_terms_match_plain_versions() {
        let mu = Array::matrix(2, 2, vec![0.3, -1.0, 0.5, 2.0]);
        let ls = Array::matrix(2, 2, vec![0.1, -0.4, 0.0, 0.7]);
        let mut tape = Tape::new();
        let m = tape.constant(mu.clone());
        let l = tape.constant(ls.clone());
        let k = kl_sum_var(&mut tape, m, l);
        let want = kl_divergence(mu.row(0), ls.row(0)) + kl_divergence(mu.row(1), ls.row(1));
        assert!((tape.value(k).item() - want).abs() < 1e-12);
        let c = consistency_sum_var(&mut tape, m, vec![0, 0]).unwrap();
        assert!((tape.value(c).item() - 2.0 * loss_consistency(&mu)).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let e = Array::zeros(&[0, 3]);
        assert!(loss_variational(&e, &e, &e, &e).is_err());
    }

    #[test]
    fn report_composition() {
        let r = NvifLossReport::new(0.4, 0.2, 3.0, 0.1);
        assert_eq!(r.total, 0.4 + 0.2 + 0.1 * 3.0);
    }
}
