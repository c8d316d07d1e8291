//! Model-free watermark detection.
//!
//! Two statistics over the same scoring range `t = k..T`: a uniform
//! one-proportion z-test counting green tokens, and a weighted variant where
//! each position contributes proportionally to the indeterminacy of its POS
//! context. Verification needs only the key, the table, a tagger, and the
//! vocabulary — never model logits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Tagger;
use crate::error::{Error, Result};
use crate::greenlist::{is_green, Vocabulary, WatermarkKey};
use crate::indeterminacy::IndeterminacyTable;

/// Default decision threshold on the z statistic.
pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

/// Everything the weighted detector needs besides the text itself.
pub struct DetectorInputs<'a> {
    pub vocab: &'a Vocabulary,
    pub tagger: &'a dyn Tagger,
    pub table: &'a IndeterminacyTable,
    pub key: WatermarkKey,
    pub gamma: f64,
    pub k: usize,
}

impl DetectorInputs<'_> {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("context size k must be >= 2, got {}", self.k)));
        }
        if self.table.tagset_id() != self.tagger.tagset().id() {
            return Err(Error::Config(format!(
                "table tagset `{}` does not match tagger tagset `{}`",
                self.table.tagset_id(),
                self.tagger.tagset().id()
            )));
        }
        Ok(())
    }
}

/// One scored position of the weighted detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    /// 1-based position in the scored text.
    pub position: usize,
    pub tag: String,
    pub weight: f64,
    pub green: bool,
    /// This token's share of the final z statistic.
    pub contribution: f64,
}

/// Full detection outcome for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Number of scored positions.
    pub scored_t: usize,
    pub green_count: usize,
    /// Sum of weights over green tokens.
    pub green_weight: f64,
    pub sum_w: f64,
    pub sum_w2: f64,
    pub z_uniform: f64,
    pub z_weighted: f64,
    /// Set when every scored position had zero weight; the weighted
    /// statistic is defined as 0 in that case.
    pub zero_weight: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_token: Vec<TokenScore>,
    /// Share of the absolute per-token contributions by word category,
    /// normalized to sum 1 when any contribution is nonzero.
    pub category_shares: BTreeMap<String, f64>,
}

impl DetectionReport {
    /// Drops the per-token list (verbose-only payload).
    pub fn without_per_token(mut self) -> Self {
        self.per_token.clear();
        self
    }
}

fn uniform_z(green_count: f64, scored_t: f64, gamma: f64) -> f64 {
    (green_count - gamma * scored_t) / (scored_t * gamma * (1.0 - gamma)).sqrt()
}

pub(crate) fn weighted_z(green_weight: f64, sum_w: f64, sum_w2: f64, gamma: f64) -> f64 {
    if sum_w2 == 0.0 {
        return 0.0;
    }
    (green_weight - gamma * sum_w) / (gamma * (1.0 - gamma) * sum_w2).sqrt()
}

/// Uniform one-proportion z-test over token ids: positions `t = k..T` are
/// scored, each counting 1 when the token is green under the partition
/// seeded by its predecessor.
pub fn z_uniform(
    tokens: &[u32],
    key: WatermarkKey,
    gamma: f64,
    k: usize,
    vocab_size: usize,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::Config(format!("context size k must be >= 2, got {k}")));
    }
    if tokens.len() < k {
        return Err(Error::NothingToScore);
    }
    if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::Config(format!("token id {bad} outside vocabulary")));
    }
    let mut green_count = 0usize;
    for t in k..=tokens.len() {
        let prev = tokens[t - 2] as u64;
        if is_green(key, prev, tokens[t - 1], vocab_size, gamma)? {
            green_count += 1;
        }
    }
    let scored_t = tokens.len() - k + 1;
    Ok(uniform_z(green_count as f64, scored_t as f64, gamma))
}

/// Uniform z-test over surface words: in-vocabulary words are scored by id;
/// out-of-vocabulary words can never be green (the green list is a subset of
/// the vocabulary) but still seed the next position's partition through a
/// stable surface hash. Returns the statistic and the scored length.
pub fn z_uniform_words(
    words: &[&str],
    vocab: &Vocabulary,
    key: WatermarkKey,
    gamma: f64,
    k: usize,
) -> Result<(f64, usize)> {
    if k < 2 {
        return Err(Error::Config(format!("context size k must be >= 2, got {k}")));
    }
    if words.len() < k {
        return Err(Error::NothingToScore);
    }
    let mut green_count = 0usize;
    for t in k..=words.len() {
        let prev_seed = vocab.prev_seed(words[t - 2]);
        let green = match vocab.id(words[t - 1]) {
            Some(id) => is_green(key, prev_seed, id, vocab.len(), gamma)?,
            None => false,
        };
        if green {
            green_count += 1;
        }
    }
    let scored_t = words.len() - k + 1;
    Ok((uniform_z(green_count as f64, scored_t as f64, gamma), scored_t))
}

/// Weighted detection: tags the whole text, reconstructs each position's POS
/// context, weights its green/red evidence by the context's indeterminacy,
/// and aggregates the normalized statistic plus per-token and per-category
/// breakdowns.
pub fn z_weighted(words: &[&str], inputs: &DetectorInputs<'_>) -> Result<DetectionReport> {
    inputs.validate()?;
    let k = inputs.k;
    if words.len() < k {
        return Err(Error::NothingToScore);
    }
    let tags = inputs.tagger.tag_words(words);
    let tagset = inputs.tagger.tagset();
    let vocab_size = inputs.vocab.len();

    let mut per_token = Vec::with_capacity(words.len() - k + 1);
    let mut green_count = 0usize;
    let mut green_weight = 0.0;
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    for t in k..=words.len() {
        let context = &tags[t - k..t - 1];
        let weight = inputs.table.lookup(context);
        let prev_seed = inputs.vocab.prev_seed(words[t - 2]);
        let green = match inputs.vocab.id(words[t - 1]) {
            Some(id) => is_green(inputs.key, prev_seed, id, vocab_size, inputs.gamma)?,
            None => false,
        };
        sum_w += weight;
        sum_w2 += weight * weight;
        if green {
            green_count += 1;
            green_weight += weight;
        }
        per_token.push(TokenScore {
            position: t,
            tag: tags[t - 1].as_str().to_owned(),
            weight,
            green,
            contribution: 0.0,
        });
    }

    let scored_t = per_token.len();
    let zero_weight = sum_w2 == 0.0;
    let z_w = weighted_z(green_weight, sum_w, sum_w2, inputs.gamma);
    let z_u = uniform_z(green_count as f64, scored_t as f64, inputs.gamma);

    let denom = (inputs.gamma * (1.0 - inputs.gamma) * sum_w2).sqrt();
    let mut category_abs: BTreeMap<String, f64> = BTreeMap::new();
    for cat in ["Content", "Function", "Other"] {
        category_abs.insert(cat.to_owned(), 0.0);
    }
    let mut total_abs = 0.0;
    for (score, t) in per_token.iter_mut().zip(k..) {
        if !zero_weight {
            let indicator = if score.green { 1.0 } else { 0.0 };
            score.contribution = score.weight * (indicator - inputs.gamma) / denom;
        }
        let category = tagset.category_of(&tags[t - 1])?;
        let abs = score.contribution.abs();
        *category_abs.get_mut(category.as_str()).expect("all categories present") += abs;
        total_abs += abs;
    }
    let category_shares = if total_abs > 0.0 {
        category_abs.into_iter().map(|(c, v)| (c, v / total_abs)).collect()
    } else {
        category_abs
    };

    Ok(DetectionReport {
        scored_t,
        green_count,
        green_weight,
        sum_w,
        sum_w2,
        z_uniform: z_u,
        z_weighted: z_w,
        zero_weight,
        per_token,
        category_shares,
    })
}

/// Watermark verdict: strict exceedance of the threshold.
pub fn decide(z: f64, threshold: f64) -> bool {
    z > threshold
}
