//! Deterministic seeded splitting: shuffle under a fixed seed, then take a
//! prefix of the requested size. Identical (items, fraction, seed) always
//! yields identical splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of items a fraction selects out of `n`, rounding half up.
pub fn fraction_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

/// Shuffle `items` with a ChaCha stream seeded by `seed`, then split off the
/// first `take` elements. Returns `(taken, rest)`, both in shuffled order.
pub fn seeded_take<T>(items: Vec<T>, take: usize, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut items = items;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let rest = items.split_off(take.min(items.len()));
    (items, rest)
}

/// Split off a `fraction`-sized share (round-half-up) after a seeded shuffle.
pub fn seeded_fraction<T>(items: Vec<T>, fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let take = fraction_size(items.len(), fraction);
    seeded_take(items, take, seed)
}
