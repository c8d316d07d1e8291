//! Seeded sampling helpers shared by generation, the toy corpus sampler,
//! and the attack machinery. All draws go through `next_u64` so results are
//! reproducible across platforms and rand-crate versions.

use rand_chacha::rand_core::RngCore;

/// Uniform draw in `[0, 1)` with 53-bit precision.
#[inline]
pub(crate) fn u01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Samples an index from an (approximately normalized) probability vector by
/// cumulative walk; falls back to the last positive-probability index when
/// rounding leaves the draw beyond the accumulated mass.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut impl RngCore) -> usize {
    debug_assert!(!probs.is_empty());
    let draw = u01(rng);
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Uniform index in `0..n`.
pub(crate) fn sample_uniform_index(n: usize, rng: &mut impl RngCore) -> usize {
    debug_assert!(n > 0);
    ((u01(rng) * n as f64) as usize).min(n - 1)
}
