//! Works through the two-agent additive task: per-agent values add up to
//! the team value, team advantages are sums of agent advantages, and with
//! equal agent weights the shared update never points against the team.
//!
//! `cargo run --example credit_alignment`

use nvif_lab::policy::{alignment_check, compute_gae, ToyMdp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mdp = ToyMdp::example();
    let v1 = mdp.agent_values(0)?;
    let v2 = mdp.agent_values(1)?;
    let team = mdp.team_values([1.0, 1.0])?;
    for s in 0..mdp.n_states() {
        println!("state {s}: V1 {:.4} + V2 {:.4} = {:.4}, team {:.4}", v1[s], v2[s], v1[s] + v2[s], team[s]);
    }

    let traj = mdp.trajectory(&[(0, 1), (1, 0)]);
    let mut states: Vec<usize> = traj.iter().map(|s| s.state).collect();
    states.push(mdp.terminal());
    let adv = |i: usize, v: &[f64]| {
        let r: Vec<f64> = traj.iter().map(|s| s.rewards[i]).collect();
        let vals: Vec<f64> = states.iter().map(|&s| v[s]).collect();
        compute_gae(&r, &vals, mdp.gamma, 0.5)
    };
    let (a1, a2) = (adv(0, &v1)?, adv(1, &v2)?);
    println!("agent advantages {a1:?} and {a2:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (label, weights) in [("equal", vec![1.0; 3]), ("unequal", vec![0.2, 3.0, 0.5])] {
        let mut worst = f64::INFINITY;
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            worst = worst.min(alignment_check(&a, &weights, &[1.0; 3], &[0.0; 3])?.dot_approx);
        }
        println!("{label} weights: smallest alignment over 10000 draws {worst:.4}");
    }
    Ok(())
}
