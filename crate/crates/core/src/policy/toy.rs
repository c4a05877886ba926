//! Small deterministic two-agent MDP with exact policy evaluation.

use serde::{Deserialize, Serialize};

use super::PolicyError;

/// States `0..n`; the last one is terminal. Every non-terminal transition
/// goes to a higher-numbered state, so values follow by backward induction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMdp {
    pub gamma: f64,
    /// `next[s][a1][a2]`.
    pub next: Vec<[[usize; 2]; 2]>,
    /// `rewards[s][a1][a2]` = `[r_1, r_2]`.
    pub rewards: Vec<[[[f64; 2]; 2]; 2]>,
    /// `policy[i][s][a]`, the probability that agent `i` picks `a` in `s`.
    pub policy: [Vec<[f64; 2]>; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyStep {
    pub state: usize,
    pub actions: (usize, usize),
    pub rewards: [f64; 2],
}

impl ToyMdp {
    /// Three states: 0 branches to 1 or straight to the terminal 2
    /// depending on whether the agents agree; 1 always ends. Rewards,
    /// probabilities and γ are dyadic so every value is exact in `f64`.
    pub fn example() -> Self {
        Self {
            gamma: 0.5,
            next: vec![[[1, 2], [2, 1]], [[2, 2], [2, 2]], [[2, 2], [2, 2]]],
            rewards: vec![
                [[[1.0, 0.0], [0.0, -1.0]], [[-1.0, 0.0], [2.0, 2.0]]],
                [[[0.0, 3.0], [1.0, 1.0]], [[4.0, 0.0], [-2.0, 0.5]]],
                [[[0.0; 2]; 2]; 2],
            ],
            policy: [
                vec![[0.5, 0.5], [0.25, 0.75], [0.5, 0.5]],
                vec![[0.75, 0.25], [0.5, 0.5], [0.5, 0.5]],
            ],
        }
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn terminal(&self) -> usize {
        self.n_states() - 1
    }

    fn validate(&self) -> Result<(), PolicyError> {
        let n = self.n_states();
        if n < 2 || self.rewards.len() != n || self.policy.iter().any(|p| p.len() != n) {
            return Err(PolicyError::Argument("toy MDP tables disagree in size".into()));
        }
        for s in 0..n - 1 {
            for row in &self.next[s] {
                if row.iter().any(|&t| t <= s || t >= n) {
                    return Err(PolicyError::Argument(format!("state {s} does not move forward")));
                }
            }
        }
        Ok(())
    }

    /// `V(s) = Σ_{a1,a2} π_1(a1|s) π_2(a2|s) [r(s, a1, a2) + γ V(next)]`
    /// for the scalar reward `reward(s, a1, a2)`.
    pub fn evaluate(&self, reward: impl Fn(usize, usize, usize) -> f64) -> Result<Vec<f64>, PolicyError> {
        self.validate()?;
        let n = self.n_states();
        let mut v = vec![0.0; n];
        for s in (0..n - 1).rev() {
            let mut acc = 0.0;
            for a1 in 0..2 {
                for a2 in 0..2 {
                    let p = self.policy[0][s][a1] * self.policy[1][s][a2];
                    acc += p * (reward(s, a1, a2) + self.gamma * v[self.next[s][a1][a2]]);
                }
            }
            v[s] = acc;
        }
        Ok(v)
    }

    pub fn agent_values(&self, agent: usize) -> Result<Vec<f64>, PolicyError> {
        self.evaluate(|s, a1, a2| self.rewards[s][a1][a2][agent])
    }

    /// Values of the team reward `ω_1 r_1 + ω_2 r_2`.
    pub fn team_values(&self, weights: [f64; 2]) -> Result<Vec<f64>, PolicyError> {
        self.evaluate(|s, a1, a2| {
            let r = self.rewards[s][a1][a2];
            weights[0] * r[0] + weights[1] * r[1]
        })
    }

    /// Steps from state 0 under the given joint actions until the terminal
    /// state (extra actions are ignored).
    pub fn trajectory(&self, joint: &[(usize, usize)]) -> Vec<ToyStep> {
        let mut out = Vec::new();
        let mut s = 0;
        for &(a1, a2) in joint {
            if s == self.terminal() {
                break;
            }
            out.push(ToyStep {
                state: s,
                actions: (a1, a2),
                rewards: self.rewards[s][a1][a2],
            });
            s = self.next[s][a1][a2];
        }
        out
    }
}
