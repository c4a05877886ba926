use serde::{Deserialize, Serialize};

use super::ParamStore;

/// Adaptive-moment optimizer with bias correction. Moment buffers and the
/// step counter live in the [`ParamStore`], so a store checkpoint captures
/// the full optimizer state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment decay rates and denominator guard, shared by every optimizer a
/// run creates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Moments {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Moments {
    fn default() -> Self {
        let a = Adam::default();
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl Moments {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("{name} = {b} not in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            out.push(format!("eps = {} must be positive", self.eps));
        }
        out
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn new(lr: f64, moments: Moments) -> Self {
        Self {
            lr,
            beta1: moments.beta1,
            beta2: moments.beta2,
            eps: moments.eps,
        }
    }

    pub fn step(&self, store: &mut ParamStore) {
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let n = store.len();
        for i in 0..n {
            let g = store.grads[i].data();
            let m = store.first_moment[i].data_mut();
            let v = store.second_moment[i].data_mut();
            let p = store.values[i].data_mut();
            for (((pv, mv), vv), &gv) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .grads_mut()
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in store.grads_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
