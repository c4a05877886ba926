//! Records a small computation on the tape, backpropagates, and compares
//! every analytic gradient against central differences.
//!
//! `cargo run --example gradcheck`

use nvif_lab::diffcore::gradcheck::check_gradients;
use nvif_lab::diffcore::{gaussian_sample, Array, GruCell, Linear, ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let enc = Linear::new(&mut store, "enc", 5, 4, true, &mut rng)?;
    let gru = GruCell::new(&mut store, "gru", 4, 4, &mut rng)?;
    let head = Linear::new(&mut store, "head", 4, 6, true, &mut rng)?;
    let x = Array::matrix(3, 5, (0..15).map(|k| (k as f64 * 0.37).sin()).collect());
    let target = Array::matrix(3, 3, (0..9).map(|k| (k % 2) as f64).collect());

    // A miniature VAE step: encode, recur, sample, decode, BCE.
    let report = check_gradients(&mut store, 1e-6, None, |tape: &mut Tape<'_>, s| {
        let xv = tape.constant(x.clone());
        let h = enc.forward(tape, s, xv)?;
        let h = tape.tanh(h);
        let h = gru.forward(tape, s, h, h)?;
        let out = head.forward(tape, s, h)?;
        let mu_w = tape.constant(Array::matrix(6, 3, (0..18).map(|k| if k % 7 == 0 { 1.0 } else { 0.0 }).collect()));
        let ls_w = tape.constant(Array::matrix(6, 3, (0..18).map(|k| if k % 5 == 1 { 0.5 } else { 0.0 }).collect()));
        let mu = tape.matmul(out, mu_w)?;
        let ls = tape.matmul(out, ls_w)?;
        let z = gaussian_sample(tape, mu, ls, &mut ChaCha8Rng::seed_from_u64(7))?;
        let p = tape.sigmoid(z);
        let t = tape.constant(target.clone());
        tape.bce_loss(t, p)
    })?;
    println!("checked {} scalars, max relative error {:.2e}", report.checked, report.max_rel_error);
    if let Some((name, k, analytic, numeric)) = report.worst {
        println!("worst entry {name}[{k}]: analytic {analytic:.6e} numeric {numeric:.6e}");
    }
    Ok(())
}
