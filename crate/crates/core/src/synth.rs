//! Deterministic 6-D model surface used when no ab initio data is available:
//! a sum of Morse terms per coordinate plus a Gaussian coupling between every
//! pair of coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QgpError, Result};
use crate::types::{Dataset, InputVector};

pub const SYNTH_DIM: usize = 6;
/// Morse well depth, cm⁻¹.
pub const MORSE_DEPTH: f64 = 5000.0;
pub const MORSE_ALPHA: f64 = 1.5;
pub const MORSE_R0: f64 = 1.2;
/// Pair coupling strength, cm⁻¹.
pub const COUPLING: f64 = 300.0;
pub const DOMAIN: (f64, f64) = (0.5, 3.0);
/// Largest synthetic dataset generated.
pub const MAX_POINTS: usize = 31_124;

/// Energy in cm⁻¹ at `x`, which must be 6-D with components in `[0.5, 3.0]`.
pub fn synth_pes(x: &InputVector) -> Result<f64> {
    if x.dim() != SYNTH_DIM {
        return Err(QgpError::DimensionMismatch {
            expected: SYNTH_DIM,
            actual: x.dim(),
        });
    }
    let v = x.as_slice();
    if let Some(c) = v.iter().find(|c| !(DOMAIN.0..=DOMAIN.1).contains(*c)) {
        return Err(QgpError::OutOfDomain(format!(
            "component {c} outside [{}, {}]",
            DOMAIN.0, DOMAIN.1
        )));
    }
    let morse: f64 = v
        .iter()
        .map(|&xi| {
            let s = 1.0 - (-MORSE_ALPHA * (xi - MORSE_R0)).exp();
            MORSE_DEPTH * s * s
        })
        .sum();
    let mut coupling = 0.0;
    for i in 0..SYNTH_DIM {
        for j in i + 1..SYNTH_DIM {
            let d = v[i] - v[j];
            coupling += (-d * d).exp();
        }
    }
    Ok(morse + COUPLING * coupling)
}

/// `n` points drawn uniformly from the domain box with `seed`; `n` is capped
/// at [`MAX_POINTS`].
pub fn synth_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(QgpError::EmptyInput("synthetic dataset of zero points"));
    }
    let n = n.min(MAX_POINTS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut energies = Vec::with_capacity(n);
    for _ in 0..n {
        let x = InputVector::new(
            (0..SYNTH_DIM)
                .map(|_| rng.random_range(DOMAIN.0..=DOMAIN.1))
                .collect(),
        )?;
        energies.push(synth_pes(&x)?);
        inputs.push(x);
    }
    Dataset::new(SYNTH_DIM, inputs, energies)
}
