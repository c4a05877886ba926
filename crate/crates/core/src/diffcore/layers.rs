use rand::Rng;
use rand_distr::StandardNormal;

use super::{init, Array, DiffError, ParamId, ParamStore, Tape, Var};

/// Lower clamp for log standard deviations.
pub const LOG_SIGMA_MIN: f64 = -10.0;
/// Upper clamp for log standard deviations.
pub const LOG_SIGMA_MAX: f64 = 4.0;

/// Affine layer `x·W + b` with `W: in×out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let weight = store.add(format!("{name}.w"), init::glorot_uniform(rng, fan_in, fan_out))?;
        let bias = if bias {
            Some(store.add(format!("{name}.b"), init::zeros_row(fan_out))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    /// Looks up an existing layer by name.
    pub fn existing(store: &ParamStore, name: &str, bias: bool) -> Result<Self, DiffError> {
        let weight = store.id(&format!("{name}.w"))?;
        let w = store.value(weight);
        let bias = if bias {
            Some(store.id(&format!("{name}.b"))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in: w.rows(),
            fan_out: w.cols(),
        })
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
    ) -> Result<Var, DiffError> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two affine layers with a ReLU between them.
#[derive(Clone, Copy, Debug)]
pub struct TwoLayerMlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl TwoLayerMlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.l0"), fan_in, hidden, true, rng)?,
            output: Linear::new(store, &format!("{name}.l1"), hidden, fan_out, true, rng)?,
        })
    }

    pub fn existing(store: &ParamStore, name: &str) -> Result<Self, DiffError> {
        Ok(Self {
            hidden: Linear::existing(store, &format!("{name}.l0"), true)?,
            output: Linear::existing(store, &format!("{name}.l1"), true)?,
        })
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
    ) -> Result<Var, DiffError> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.output.forward(tape, store, h)
    }

    pub fn fan_in(&self) -> usize {
        self.hidden.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.output.fan_out
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ([x, h]·W_z + b_z)
/// r  = σ([x, h]·W_r + b_r)
/// n  = tanh([x, r ⊙ h]·W_n + b_n)
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub update: Linear,
    pub reset: Linear,
    pub candidate: Linear,
    pub input_width: usize,
    pub hidden_width: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_width: usize,
        hidden_width: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let fan_in = input_width + hidden_width;
        Ok(Self {
            update: Linear::new(store, &format!("{name}.z"), fan_in, hidden_width, true, rng)?,
            reset: Linear::new(store, &format!("{name}.r"), fan_in, hidden_width, true, rng)?,
            candidate: Linear::new(store, &format!("{name}.n"), fan_in, hidden_width, true, rng)?,
            input_width,
            hidden_width,
        })
    }

    pub fn existing(store: &ParamStore, name: &str) -> Result<Self, DiffError> {
        let update = Linear::existing(store, &format!("{name}.z"), true)?;
        let hidden_width = update.fan_out;
        Ok(Self {
            update,
            reset: Linear::existing(store, &format!("{name}.r"), true)?,
            candidate: Linear::existing(store, &format!("{name}.n"), true)?,
            input_width: update.fan_in - hidden_width,
            hidden_width,
        })
    }

    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        x: Var,
        h: Var,
    ) -> Result<Var, DiffError> {
        let (xv, hv) = (tape.value(x), tape.value(h));
        if xv.cols() != self.input_width || hv.cols() != self.hidden_width || xv.rows() != hv.rows() {
            return Err(DiffError::Shape {
                op: "gru_cell",
                left: xv.shape().to_vec(),
                right: hv.shape().to_vec(),
            });
        }
        let xh = tape.concat(&[x, h])?;
        let z = self.update.forward(tape, store, xh)?;
        let z = tape.sigmoid(z);
        let r = self.reset.forward(tape, store, xh)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let xrh = tape.concat(&[x, rh])?;
        let n = self.candidate.forward(tape, store, xrh)?;
        let n = tape.tanh(n);
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let keep = tape.mul(one_minus_z, h)?;
        let write = tape.mul(z, n)?;
        tape.add(keep, write)
    }
}

/// Reparameterised draw `mu + exp(clamp(log_sigma)) ⊙ ε`, `ε ~ N(0, I)`.
pub fn gaussian_sample<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    mu: Var,
    log_sigma: Var,
    rng: &mut R,
) -> Result<Var, DiffError> {
    let shape = tape.value(mu).shape().to_vec();
    if tape.value(log_sigma).shape() != shape.as_slice() {
        return Err(DiffError::Shape {
            op: "gaussian_sample",
            left: shape,
            right: tape.value(log_sigma).shape().to_vec(),
        });
    }
    let n: usize = shape.iter().product();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let eps = tape.constant(Array::new(shape, eps)?);
    let ls = tape.clamp(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let sigma = tape.exp(ls);
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop GRU reference, independent of the tape.
    fn gru_reference(store: &ParamStore, cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let affine = |lin: &Linear, input: &[f64], j: usize| {
            let w = store.value(lin.weight);
            let mut acc = store.value(lin.bias.unwrap()).data()[j];
            for (p, &v) in input.iter().enumerate() {
                acc += v * w.get(p, j);
            }
            acc
        };
        let d = cell.hidden_width;
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let z: Vec<f64> = (0..d).map(|j| sig(affine(&cell.update, &xh, j))).collect();
        let r: Vec<f64> = (0..d).map(|j| sig(affine(&cell.reset, &xh, j))).collect();
        let xrh: Vec<f64> = x
            .iter()
            .copied()
            .chain(h.iter().zip(&r).map(|(a, b)| a * b))
            .collect();
        let n: Vec<f64> = (0..d).map(|j| affine(&cell.candidate, &xrh, j).tanh()).collect();
        (0..d).map(|j| (1.0 - z[j]) * h[j] + z[j] * n[j]).collect()
    }

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn gru_zero_weights_halves_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 3, &mut rng).unwrap();
        zero_all(&mut store);
        let mut tape = Tape::new();
        let x = tape.constant(Array::matrix(1, 2, vec![1.0, -2.0]));
        let h = tape.constant(Array::matrix(1, 3, vec![0.2, -0.4, 1.0]));
        let out = cell.forward(&mut tape, &store, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.1, -0.2, 0.5]);
    }

    #[test]
    fn gru_zero_hidden_with_zero_candidate_path_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 3, &mut rng).unwrap();
        store.value_mut(cell.candidate.weight).data_mut().fill(0.0);
        store.value_mut(cell.candidate.bias.unwrap()).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let x = tape.constant(Array::matrix(1, 2, vec![0.7, 3.0]));
        let h = tape.constant(Array::zeros(&[1, 3]));
        let out = cell.forward(&mut tape, &store, x, h).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 4, 5, &mut rng).unwrap();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.value_mut(id).data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(Array::matrix(2, 4, x.clone()));
        let hv = tape.constant(Array::matrix(2, 5, h.clone()));
        let out = cell.forward(&mut tape, &store, xv, hv).unwrap();
        for r in 0..2 {
            let want = gru_reference(&store, &cell, &x[r * 4..r * 4 + 4], &h[r * 5..r * 5 + 5]);
            for (a, b) in tape.value(out).row(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_rejects_mismatched_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 2, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Array::zeros(&[1, 3]));
        let h = tape.constant(Array::zeros(&[1, 3]));
        assert!(cell.forward(&mut tape, &store, x, h).is_err());
    }

    #[test]
    fn degenerate_sigma_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let mu = tape.constant(Array::row_vector(vec![1.5, -2.0]));
        let ls = tape.constant(Array::row_vector(vec![-1e9, -1e9]));
        let s = gaussian_sample(&mut tape, mu, ls, &mut rng).unwrap();
        for (a, b) in tape.value(s).data().iter().zip([1.5, -2.0]) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn sample_mean_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut tape = Tape::new();
        let mu = tape.constant(Array::matrix(n, 1, vec![0.7; n]));
        let ls = tape.constant(Array::matrix(n, 1, vec![0.3f64.ln(); n]));
        let s = gaussian_sample(&mut tape, mu, ls, &mut rng).unwrap();
        let mean: f64 = tape.value(s).data().iter().sum::<f64>() / n as f64;
        assert!((mean - 0.7).abs() < 4.0 * 0.3 / (n as f64).sqrt());
    }

    #[test]
    fn sample_gradient_wrt_mean_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let mu_id = store.add("mu", Array::row_vector(vec![0.1, 0.2, 0.3])).unwrap();
        let ls_id = store.add("ls", Array::row_vector(vec![0.0, -1.0, 0.5])).unwrap();
        let mut tape = Tape::new();
        let mu = tape.param(&store, mu_id);
        let ls = tape.param(&store, ls_id);
        let s = gaussian_sample(&mut tape, mu, ls, &mut rng).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(&store, mu_id).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(g.get(&store, ls_id).is_some());
    }
}
