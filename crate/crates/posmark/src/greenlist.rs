//! Deterministic green/red vocabulary partitioning.
//!
//! Every `(key, preceding token)` pair induces a keyed score for each token
//! id; the `floor(gamma * |V|)` lowest-scoring ids (ties to the smaller id)
//! form the green list. The scoring function is a fixed 64-bit mix, spelled
//! out bit-exactly below, so any independent implementation can reproduce
//! the partition from public information alone.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Secret watermark key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WatermarkKey(pub u64);

impl From<u64> for WatermarkKey {
    fn from(key: u64) -> Self {
        WatermarkKey(key)
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed token score. Normative layout:
/// `splitmix64(key ^ prev ^ (token * 0x9E3779B97F4A7C15))`, all arithmetic
/// modulo 2^64.
#[inline]
pub fn prf_score(key: WatermarkKey, prev_seed: u64, token: u32) -> u64 {
    splitmix64(key.0 ^ prev_seed ^ (token as u64).wrapping_mul(GOLDEN))
}

/// Stable 64-bit seed for out-of-vocabulary preceding words: FNV-1a over the
/// surface bytes, then the same splitmix64 finalizer.
pub fn surface_seed(surface: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in surface.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(h)
}

/// Dense id <-> surface bijection over word-level tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from unique surfaces; ids follow input order.
    pub fn new(surfaces: Vec<String>) -> Result<Self> {
        if surfaces.len() < 2 {
            return Err(Error::Config(format!(
                "vocabulary needs at least 2 tokens, got {}",
                surfaces.len()
            )));
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        for (id, surface) in surfaces.iter().enumerate() {
            if index.insert(surface.clone(), id as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary surface `{surface}`")));
            }
        }
        Ok(Vocabulary { surfaces, index })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.surfaces[id as usize]
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// PRF seed of a preceding word: its id when in-vocabulary, otherwise a
    /// stable hash of the surface (an out-of-vocabulary word still seeds the
    /// next position's partition deterministically).
    pub fn prev_seed(&self, surface: &str) -> u64 {
        match self.id(surface) {
            Some(id) => id as u64,
            None => surface_seed(surface),
        }
    }
}

/// The green half of a partition: sorted token ids plus the ratio that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenPartition {
    green: Vec<u32>,
    gamma: f64,
}

impl GreenPartition {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Sorted ascending.
    pub fn ids(&self) -> &[u32] {
        &self.green
    }

    pub fn len(&self) -> usize {
        self.green.len()
    }

    pub fn is_empty(&self) -> bool {
        self.green.is_empty()
    }

    pub fn contains(&self, token: u32) -> bool {
        self.green.binary_search(&token).is_ok()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

/// Number of green tokens for a ratio and vocabulary size.
pub fn green_size(gamma: f64, vocab_size: usize) -> usize {
    (gamma * vocab_size as f64).floor() as usize
}

/// Partitions the vocabulary for one step: exactly `floor(gamma * |V|)`
/// green ids, chosen as the lowest keyed scores with ties to the smaller id.
pub fn partition(
    key: WatermarkKey,
    prev_seed: u64,
    vocab_size: usize,
    gamma: f64,
) -> Result<GreenPartition> {
    check_gamma(gamma)?;
    if vocab_size < 2 {
        return Err(Error::Config(format!("vocabulary size must be >= 2, got {vocab_size}")));
    }
    let g = green_size(gamma, vocab_size);
    let mut scored: Vec<(u64, u32)> =
        (0..vocab_size as u32).map(|id| (prf_score(key, prev_seed, id), id)).collect();
    let mut green: Vec<u32> = if g == 0 {
        Vec::new()
    } else {
        scored.select_nth_unstable(g - 1);
        scored[..g].iter().map(|&(_, id)| id).collect()
    };
    green.sort_unstable();
    Ok(GreenPartition { green, gamma })
}

/// Membership test equivalent to `partition(..).contains(token)`, computed
/// by ranking the token's score against the rest of the vocabulary without
/// materializing the set.
pub fn is_green(
    key: WatermarkKey,
    prev_seed: u64,
    token: u32,
    vocab_size: usize,
    gamma: f64,
) -> Result<bool> {
    check_gamma(gamma)?;
    if vocab_size < 2 {
        return Err(Error::Config(format!("vocabulary size must be >= 2, got {vocab_size}")));
    }
    let g = green_size(gamma, vocab_size);
    if g == 0 {
        return Ok(false);
    }
    let own = (prf_score(key, prev_seed, token), token);
    let mut below = 0usize;
    for id in 0..vocab_size as u32 {
        if id == token {
            continue;
        }
        if (prf_score(key, prev_seed, id), id) < own {
            below += 1;
            if below >= g {
                return Ok(false);
            }
        }
    }
    Ok(below < g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_has_exact_size_and_is_deterministic() {
        let key = WatermarkKey(7);
        let a = partition(key, 3, 10, 0.5).unwrap();
        let b = partition(key, 3, 10, 0.5).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        assert!(a.ids().iter().all(|&id| id < 10));
    }

    #[test]
    fn two_token_vocabulary_has_exactly_one_green() {
        let part = partition(WatermarkKey(42), 0, 2, 0.5).unwrap();
        assert_eq!(part.len(), 1);
    }

    #[test]
    fn gamma_outside_unit_interval_is_rejected() {
        assert!(partition(WatermarkKey(1), 0, 10, 0.0).is_err());
        assert!(partition(WatermarkKey(1), 0, 10, 1.0).is_err());
        assert!(is_green(WatermarkKey(1), 0, 1, 10, -0.5).is_err());
    }

    #[test]
    fn membership_agrees_with_partition() {
        let key = WatermarkKey(0xDEAD_BEEF);
        for prev in [0u64, 1, 99, u64::MAX] {
            for vocab_size in [2usize, 3, 17, 64] {
                let part = partition(key, prev, vocab_size, 0.3).unwrap();
                for id in 0..vocab_size as u32 {
                    assert_eq!(
                        is_green(key, prev, id, vocab_size, 0.3).unwrap(),
                        part.contains(id),
                        "vocab {vocab_size} id {id}"
                    );
                }
            }
        }
    }

    #[test]
    fn each_token_is_green_in_about_half_of_partitions() {
        let key = WatermarkKey(11);
        let vocab_size = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tokens = [0u32, 7, 49];
        let mut hits = [0usize; 3];
        let trials = 1_000;
        for _ in 0..trials {
            let prev = rng.next_u64();
            let part = partition(key, prev, vocab_size, 0.5).unwrap();
            for (i, &t) in tokens.iter().enumerate() {
                if part.contains(t) {
                    hits[i] += 1;
                }
            }
        }
        for &h in &hits {
            let rate = h as f64 / trials as f64;
            assert!((rate - 0.5).abs() < 0.05, "rate {rate}");
        }
    }

    #[test]
    fn key_flip_changes_about_half_the_memberships() {
        let vocab_size = 10_000;
        let a = partition(WatermarkKey(1), 5, vocab_size, 0.5).unwrap();
        let b = partition(WatermarkKey(2), 5, vocab_size, 0.5).unwrap();
        let flipped = (0..vocab_size as u32)
            .filter(|&id| a.contains(id) != b.contains(id))
            .count();
        let rate = flipped as f64 / vocab_size as f64;
        assert!((rate - 0.5).abs() < 0.05, "flip rate {rate}");
    }

    #[test]
    fn vocabulary_is_a_bijection_with_oov_seeds() {
        let vocab =
            Vocabulary::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert_eq!(vocab.id("b"), Some(1));
        assert_eq!(vocab.surface(1), "b");
        assert_eq!(vocab.prev_seed("b"), 1);
        // OOV words get a stable non-id seed.
        assert_eq!(vocab.prev_seed("zorp"), vocab.prev_seed("zorp"));
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Vocabulary::new(vec!["a".into()]).is_err());
    }

    proptest! {
        #[test]
        fn green_size_contract_holds(
            key in proptest::num::u64::ANY,
            prev in proptest::num::u64::ANY,
            vocab_size in 2usize..200,
            gamma_pm in 1u32..1000,
        ) {
            let gamma = gamma_pm as f64 / 1000.0;
            let part = partition(WatermarkKey(key), prev, vocab_size, gamma).unwrap();
            prop_assert_eq!(part.len(), green_size(gamma, vocab_size));
        }
    }
}
