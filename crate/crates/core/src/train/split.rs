use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// `(⌊0.8n⌋, ⌊0.1n⌋, rest)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

/// Seeded shuffle, then train / validation / test by [`split_sizes`].
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> Result<Split<T>> {
    let n = items.len();
    if n < 10 {
        return Err(Error::Contract(format!(
            "need at least 10 samples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b, _) = split_sizes(n);
    let take = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect();
    Ok(Split {
        train: take(&order[..a]),
        val: take(&order[a..a + b]),
        test: take(&order[a + b..]),
    })
}
