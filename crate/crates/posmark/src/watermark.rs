//! Watermark insertion: bias the logits of green-listed tokens before
//! sampling, with the per-step strength either fixed (the classic scheme)
//! or scaled by the linguistic indeterminacy of the current POS context.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{PosTag, Tagger};
use crate::error::{Error, Result};
use crate::greenlist::{partition, GreenPartition, Vocabulary, WatermarkKey};
use crate::indeterminacy::IndeterminacyTable;
use crate::rng::sample_categorical;
use crate::strategy;

/// Default green-list ratio.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Default sampling temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Recommended fixed strength for the static scheme; the adaptive scheme
/// calibrates its base strength as `DEFAULT_STATIC_DELTA / mean_lambda` so
/// the average effective strength matches.
pub const DEFAULT_STATIC_DELTA: f64 = 2.0;

/// Logit value used to exclude a token from sampling while keeping the
/// vector finite: exp of (this - max)/temperature underflows to exactly 0.
pub const LOGIT_MASK: f64 = -1e30;

/// Anything that can score the next token over a fixed vocabulary.
///
/// Implementations must be pure: the same prefix always produces the same
/// logits, and the vector length always equals the vocabulary size.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Unnormalized log-scores for the next token given a token-id prefix.
    fn logits(&self, prefix: &[u32]) -> Result<Vec<f64>>;
}

/// Wrapper that bans a fixed set of token ids (e.g. sentence-boundary
/// markers) by masking their logits, so generated texts never contain them.
pub struct MaskedLm<'a> {
    inner: &'a dyn LanguageModel,
    banned: Vec<u32>,
}

impl<'a> MaskedLm<'a> {
    pub fn new(inner: &'a dyn LanguageModel, banned: Vec<u32>) -> Self {
        MaskedLm { inner, banned }
    }
}

impl LanguageModel for MaskedLm<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn logits(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut logits = self.inner.logits(prefix)?;
        for &id in &self.banned {
            if let Some(slot) = logits.get_mut(id as usize) {
                *slot = LOGIT_MASK;
            }
        }
        Ok(logits)
    }
}

/// Converts logits to probabilities at the given temperature,
/// max-subtracted for numerical stability.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(Error::Config("cannot softmax an empty logit vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Effective per-step strength: the base strength scaled by the context's
/// indeterminacy, so constrained contexts receive little to no bias.
pub fn adaptive_delta(delta_base: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(delta_base * lambda)
}

/// Returns a copy of the logits with `delta` added to every green-listed
/// entry; red entries and the input are untouched. `delta == 0` returns the
/// input unchanged.
pub fn apply_bias(logits: &[f64], green: &GreenPartition, delta: f64) -> Result<Vec<f64>> {
    if delta < 0.0 {
        return Err(Error::Config(format!("bias delta must be >= 0, got {delta}")));
    }
    let mut biased = logits.to_vec();
    if delta == 0.0 {
        return Ok(biased);
    }
    for &id in green.ids() {
        let slot = biased.get_mut(id as usize).ok_or_else(|| {
            Error::Config(format!("green token id {id} outside logit vector"))
        })?;
        *slot += delta;
    }
    Ok(biased)
}

/// Insertion strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fixed bias at every step.
    StaticKgw,
    /// Bias scaled by the POS context's indeterminacy.
    AdaptiveStela,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StaticKgw => "kgw",
            Mode::AdaptiveStela => "stela",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kgw" => Ok(Mode::StaticKgw),
            "stela" => Ok(Mode::AdaptiveStela),
            other => Err(Error::Config(format!(
                "unknown watermark mode `{other}` (expected one of: {})",
                strategy::bias_policy_names().join(", ")
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full insertion configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatermarkConfig {
    pub gamma: f64,
    pub delta_base: f64,
    pub k: usize,
    pub mode: Mode,
    pub key: WatermarkKey,
    pub temperature: f64,
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.delta_base < 0.0 {
            return Err(Error::Config(format!(
                "delta_base must be >= 0, got {}",
                self.delta_base
            )));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("context size k must be >= 2, got {}", self.k)));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Base strength matching the static scheme's average effective
    /// strength: `DEFAULT_STATIC_DELTA / mean_lambda` of the table.
    pub fn calibrated_delta(table: &IndeterminacyTable) -> Result<f64> {
        let mean = table.mean_lambda();
        if mean <= 0.0 {
            return Err(Error::Config(
                "cannot calibrate delta: table mean indeterminacy is zero".into(),
            ));
        }
        Ok(DEFAULT_STATIC_DELTA / mean)
    }
}

/// Per-step diagnostics recorded during generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStep {
    /// The POS context the step's indeterminacy was looked up with.
    pub context: Vec<PosTag>,
    pub lambda: f64,
    /// Effective bias applied to green logits at this step.
    pub delta: f64,
    /// Whether the sampled token fell in its step's green list.
    pub green: bool,
}

/// The generated continuation plus aligned per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub tokens: Vec<u32>,
    pub steps: Vec<GenerationStep>,
}

impl GenerationRecord {
    pub fn surfaces<'a>(&self, vocab: &'a Vocabulary) -> Vec<&'a str> {
        self.tokens.iter().map(|&id| vocab.surface(id)).collect()
    }

    pub fn green_fraction(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.green).count() as f64 / self.steps.len() as f64
    }

    pub fn mean_lambda(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.lambda).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_delta(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.delta).sum::<f64>() / self.steps.len() as f64
    }
}

/// Generates `length` tokens after `prompt`, biasing each step's green list
/// by the mode's per-step strength and sampling from the biased softmax
/// with a deterministic seeded generator.
///
/// The prompt must supply at least `k - 1` tokens so every generated
/// position has a full tag context (the table's backoff resolves unseen
/// ones). Identical inputs and seed reproduce the record exactly.
pub fn generate(
    lm: &dyn LanguageModel,
    tagger: &dyn Tagger,
    table: &IndeterminacyTable,
    config: &WatermarkConfig,
    prompt: &[u32],
    length: usize,
    rng_seed: u64,
) -> Result<GenerationRecord> {
    config.validate()?;
    if prompt.len() < config.k - 1 {
        return Err(Error::Config(format!(
            "prompt too short: need at least {} tokens for k = {}, got {}",
            config.k - 1,
            config.k,
            prompt.len()
        )));
    }
    if table.tagset_id() != tagger.tagset().id() {
        return Err(Error::Config(format!(
            "table tagset `{}` does not match tagger tagset `{}`",
            table.tagset_id(),
            tagger.tagset().id()
        )));
    }
    let vocab = lm.vocab();
    let vocab_size = vocab.len();
    if let Some(&bad) = prompt.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::Config(format!("prompt token id {bad} outside vocabulary")));
    }

    let policy = strategy::bias_policy_for(config.mode);
    let incremental = tagger.prefix_stable();
    let mut ids: Vec<u32> = prompt.to_vec();
    let mut surfaces: Vec<&str> = prompt.iter().map(|&id| vocab.surface(id)).collect();
    let mut tags: Vec<PosTag> = tagger.tag_words(&surfaces);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut record = GenerationRecord {
        tokens: Vec::with_capacity(length),
        steps: Vec::with_capacity(length),
    };

    for _ in 0..length {
        let context = tags[tags.len() - (config.k - 1)..].to_vec();
        let lambda = table.lookup(&context);
        let delta = policy.step_delta(config.delta_base, lambda)?;

        let logits = lm.logits(&ids)?;
        if logits.len() != vocab_size {
            return Err(Error::Config(format!(
                "language model returned {} logits for a vocabulary of {vocab_size}",
                logits.len()
            )));
        }
        let prev_seed = *ids.last().expect("prompt is non-empty") as u64;
        let green = partition(config.key, prev_seed, vocab_size, config.gamma)?;
        let biased = apply_bias(&logits, &green, delta)?;
        let probs = softmax(&biased, config.temperature)?;
        let token = sample_categorical(&probs, &mut rng) as u32;

        ids.push(token);
        surfaces.push(vocab.surface(token));
        if incremental {
            tags.push(tagger.tag_words(&surfaces[surfaces.len() - 1..]).remove(0));
        } else {
            tags = tagger.tag_words(&surfaces);
        }
        record.tokens.push(token);
        record.steps.push(GenerationStep {
            context,
            lambda,
            delta,
            green: green.contains(token),
        });
    }
    Ok(record)
}
