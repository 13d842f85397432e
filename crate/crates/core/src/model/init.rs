use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Half-width of the Xavier uniform range.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `count` draws uniform on `±√(6/(fan_in+fan_out))` from `rng`.
pub fn xavier_uniform(fan_in: usize, fan_out: usize, count: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = xavier_bound(fan_in, fan_out);
    (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Seeded variant of [`xavier_uniform`].
pub fn xavier_init(fan_in: usize, fan_out: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_uniform(fan_in, fan_out, count, &mut rng)
}
