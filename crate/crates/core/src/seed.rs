//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! keyed by a root seed mixed with a path of stream labels, so independent
//! consumers never share state and adding a consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Mix a root seed with a string label and any number of integer indices.
pub fn derive(seed: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ label_hash(label));
    for &i in indices {
        h = splitmix(h ^ splitmix(i));
    }
    h
}

pub fn rng(seed: u64, label: &str, indices: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label, indices))
}

/// Stable 64-bit hash of a string, used to key streams by content.
pub fn hash_str(s: &str) -> u64 {
    splitmix(label_hash(s))
}

/// Standard normal draw via Box-Muller.
pub fn gaussian(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
