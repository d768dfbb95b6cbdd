//! Shared constructors for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{PreferencePair, TokenSeq};
use crate::policy::{PolicyConfig, PolicyParams};

pub(crate) fn seq(tokens: &[u32]) -> TokenSeq {
    TokenSeq::new(tokens.to_vec())
}

/// Policy whose every row realizes p(i) = exp(levels[i]) for each listed
/// level, with the remaining mass on one extra token. Single-symbol
/// responses of token i then have per-token log-probability levels[i]
/// exactly (up to softmax arithmetic), regardless of context.
pub(crate) fn level_policy(levels: &[f64]) -> PolicyParams {
    let mass: f64 = levels.iter().map(|&x| x.exp()).sum();
    let rest = 1.0 - mass;
    assert!(rest > 0.0, "levels leave no probability mass: {levels:?}");
    let mut row: Vec<f64> = levels.to_vec();
    row.push(rest.ln());
    let v = row.len();
    PolicyParams::from_weights(PolicyConfig::new(v, 0).unwrap(), vec![row; v]).unwrap()
}

pub(crate) fn rand_policy(vocab: usize, seed: u64) -> PolicyParams {
    PolicyParams::random(PolicyConfig::new(vocab, 0).unwrap(), 1.0, seed)
}

/// Random pair with non-identical chosen/rejected responses.
pub(crate) fn rand_pair(vocab: u32, seed: u64) -> PreferencePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompt: Vec<u32> = (0..rng.random_range(0..3))
        .map(|_| rng.random_range(0..vocab))
        .collect();
    loop {
        let chosen: Vec<u32> = (0..rng.random_range(1..=5))
            .map(|_| rng.random_range(0..vocab))
            .collect();
        let rejected: Vec<u32> = (0..rng.random_range(1..=5))
            .map(|_| rng.random_range(0..vocab))
            .collect();
        if chosen != rejected {
            return PreferencePair::new(
                TokenSeq::new(prompt),
                TokenSeq::new(chosen),
                TokenSeq::new(rejected),
            );
        }
    }
}
