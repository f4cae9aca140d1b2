//! Reproducible random streams.
//!
//! Every unit of work (a synthetic record, a block, a bootstrap draw) gets its
//! own ChaCha8 stream keyed by `(master seed, dataset index, purpose)` and
//! selected by the unit index, so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Distinguishes independent uses of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Synthesis = 1,
    Bootstrap = 2,
    Generator = 3,
    Demo = 4,
}

/// Stream for work unit `unit` of dataset `dataset`.
pub fn substream(master: u64, dataset: u64, purpose: Purpose, unit: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&dataset.to_le_bytes());
    key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[24..].copy_from_slice(b"PeGS-v1\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(unit);
    rng
}

/// Inverse-CDF draw: the first category whose cumulative probability
/// exceeds `u`. Rounding slack at the top goes to the last category with
/// positive mass.
pub fn draw_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return j;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    draw_categorical(probs, rng.random::<f64>())
}
