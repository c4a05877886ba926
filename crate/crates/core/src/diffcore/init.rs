//! Weight initialisers.

use rand::Rng;

use super::Array;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, limit)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Array {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Array::matrix(rows, cols, data)
}

pub fn zeros_row(cols: usize) -> Array {
    Array::zeros(&[1, cols])
}
