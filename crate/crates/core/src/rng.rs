//! Seeded random draws. Every stream is a ChaCha8 generator so runs are
//! reproducible across platforms for a fixed seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;

pub type StreamRng = ChaCha8Rng;

/// Generator for `(seed, stream)`. Distinct streams of one seed are independent.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_vec(rng: &mut StreamRng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

/// Uniform draw on the unit sphere in `len` dimensions (normalized Gaussian).
pub fn unit_vec(rng: &mut StreamRng, len: usize) -> Vec<f64> {
    loop {
        let g = gaussian_vec(rng, len, 1.0);
        if let Some(u) = linalg::normalized(&g) {
            return u;
        }
    }
}
