//! A small additively-smoothed n-gram language model over word tokens, plus
//! a Markov tag-chain corpus sampler with known conditional entropies. Both
//! exist so the full insert/detect loop and its statistics run offline.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PosTag, TaggedSentence, Tagset};
use crate::error::{Error, Result};
use crate::greenlist::Vocabulary;
use crate::rng::{sample_categorical, sample_uniform_index};
use crate::watermark::LanguageModel;

/// Sentence-start marker; occupies id 0.
pub const BOS: &str = "<s>";
/// Sentence-end marker; occupies id 1.
pub const EOS: &str = "</s>";

/// Schema version of the model file format.
pub const LM_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct TokenCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Additive-k smoothed n-gram model. Conditional probabilities are
/// `(count(h, w) + k) / (count(h) + k * |V|)` for the longest seen suffix
/// `h` of the history, so every token keeps strictly positive probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    order: usize,
    smoothing_k: f64,
    vocab: Vocabulary,
    /// Indexed by context length 0..order; `counts[0]` is the unigram table
    /// with the single empty context.
    counts: Vec<HashMap<Vec<u32>, TokenCounts>>,
}

/// Trains the model on tagged sentences (tags are ignored; surfaces become
/// word tokens). Sentences are padded with `order - 1` start markers and one
/// end marker, and all orders up to `order` are counted for backoff.
pub fn train_toy_lm(
    sentences: &[TaggedSentence],
    order: usize,
    smoothing_k: f64,
) -> Result<ToyLm> {
    if sentences.is_empty() {
        return Err(Error::Config("cannot train a language model on an empty corpus".into()));
    }
    if order < 1 {
        return Err(Error::Config(format!("model order must be >= 1, got {order}")));
    }
    if smoothing_k <= 0.0 {
        return Err(Error::Config(format!("smoothing must be > 0, got {smoothing_k}")));
    }

    let mut surfaces: Vec<String> = vec![BOS.to_owned(), EOS.to_owned()];
    let mut seen: HashMap<&str, u32> = HashMap::new();
    seen.insert(BOS, 0);
    seen.insert(EOS, 1);
    for sentence in sentences {
        for word in sentence.surfaces() {
            if !seen.contains_key(word) {
                seen.insert(word, surfaces.len() as u32);
                surfaces.push(word.to_owned());
            }
        }
    }
    let seen: HashMap<String, u32> =
        seen.into_iter().map(|(w, id)| (w.to_owned(), id)).collect();
    let vocab = Vocabulary::new(surfaces)?;

    let mut counts: Vec<HashMap<Vec<u32>, TokenCounts>> = vec![HashMap::new(); order];
    for sentence in sentences {
        let mut seq: Vec<u32> = vec![0; order - 1];
        seq.extend(sentence.surfaces().map(|w| seen[w]));
        seq.push(1);
        for t in (order - 1)..seq.len() {
            for context_len in 0..order {
                let context = seq[t - context_len..t].to_vec();
                let entry = counts[context_len].entry(context).or_default();
                entry.total += 1;
                *entry.next.entry(seq[t]).or_insert(0) += 1;
            }
        }
    }
    Ok(ToyLm { order, smoothing_k, vocab, counts })
}

impl ToyLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Ids of the sentence-boundary markers, for masking during generation.
    pub fn boundary_ids(&self) -> Vec<u32> {
        vec![0, 1]
    }

    /// Smoothed conditional distribution of the next token given a prefix.
    /// Short prefixes and unseen histories back off to the longest seen
    /// suffix; the empty context always exists.
    pub fn conditional(&self, prefix: &[u32]) -> Vec<f64> {
        let max_len = (self.order - 1).min(prefix.len());
        let history = &prefix[prefix.len() - max_len..];
        let mut chosen: Option<&TokenCounts> = None;
        for len in (0..=history.len()).rev() {
            if let Some(tc) = self.counts[len].get(&history[history.len() - len..]) {
                chosen = Some(tc);
                break;
            }
        }
        let tc = chosen.expect("unigram context is always present");
        let v = self.vocab.len() as f64;
        let denom = tc.total as f64 + self.smoothing_k * v;
        (0..self.vocab.len() as u32)
            .map(|id| {
                let c = tc.next.get(&id).copied().unwrap_or(0) as f64;
                (c + self.smoothing_k) / denom
            })
            .collect()
    }

    /// Mean per-token negative log probability; `exp` of it is the model
    /// perplexity of the text.
    pub fn nll(&self, tokens: &[u32]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::Config("cannot score an empty token sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= self.vocab.len()) {
            return Err(Error::Config(format!("token id {bad} outside vocabulary")));
        }
        let mut total = 0.0;
        for t in 0..tokens.len() {
            let probs = self.conditional(&tokens[..t]);
            total -= probs[tokens[t] as usize].ln();
        }
        Ok(total / tokens.len() as f64)
    }

    /// Serializes the model as versioned JSON with deterministic key order.
    pub fn save(&self, mut writer: impl Write) -> Result<()> {
        let mut orders = Vec::with_capacity(self.counts.len());
        for table in &self.counts {
            let mut sorted: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
            for (context, tc) in table {
                let key = context
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(",");
                let next: BTreeMap<String, u64> =
                    tc.next.iter().map(|(id, &c)| (id.to_string(), c)).collect();
                sorted.insert(key, next);
            }
            orders.push(sorted);
        }
        let raw = RawLmFile {
            version: LM_SCHEMA_VERSION,
            order: self.order,
            smoothing_k: self.smoothing_k,
            vocab: self.vocab.surfaces().to_vec(),
            counts: orders,
        };
        serde_json::to_writer_pretty(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    /// Loads and validates a model file written by [`save`](Self::save).
    pub fn load(reader: impl Read) -> Result<Self> {
        let raw: RawLmFile =
            serde_json::from_reader(reader).map_err(|e| Error::ModelLoad(e.to_string()))?;
        if raw.version != LM_SCHEMA_VERSION {
            return Err(Error::ModelLoad(format!(
                "unsupported schema version {} (expected {})",
                raw.version, LM_SCHEMA_VERSION
            )));
        }
        if raw.order < 1 || raw.counts.len() != raw.order {
            return Err(Error::ModelLoad(format!(
                "order {} does not match {} count tables",
                raw.order,
                raw.counts.len()
            )));
        }
        if raw.smoothing_k <= 0.0 {
            return Err(Error::ModelLoad(format!("smoothing must be > 0, got {}", raw.smoothing_k)));
        }
        let vocab = Vocabulary::new(raw.vocab).map_err(|e| Error::ModelLoad(e.to_string()))?;
        let vocab_size = vocab.len() as u32;
        let parse_id = |s: &str| -> Result<u32> {
            let id: u32 = s
                .parse()
                .map_err(|_| Error::ModelLoad(format!("invalid token id `{s}`")))?;
            if id >= vocab_size {
                return Err(Error::ModelLoad(format!("token id {id} outside vocabulary")));
            }
            Ok(id)
        };
        let mut counts = Vec::with_capacity(raw.order);
        for (context_len, table) in raw.counts.into_iter().enumerate() {
            let mut out: HashMap<Vec<u32>, TokenCounts> = HashMap::with_capacity(table.len());
            for (context_key, next) in table {
                let context: Vec<u32> = if context_key.is_empty() {
                    Vec::new()
                } else {
                    context_key.split(',').map(parse_id).collect::<Result<_>>()?
                };
                if context.len() != context_len {
                    return Err(Error::ModelLoad(format!(
                        "context `{context_key}` has wrong arity for table {context_len}"
                    )));
                }
                let mut tc = TokenCounts::default();
                for (token_key, count) in next {
                    let id = parse_id(&token_key)?;
                    tc.total += count;
                    tc.next.insert(id, count);
                }
                out.insert(context, tc);
            }
            counts.push(out);
        }
        if counts[0].is_empty() {
            return Err(Error::ModelLoad("model has no unigram counts".into()));
        }
        Ok(ToyLm { order: raw.order, smoothing_k: raw.smoothing_k, vocab, counts })
    }
}

impl LanguageModel for ToyLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn logits(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self.conditional(prefix).into_iter().map(f64::ln).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct RawLmFile {
    version: u32,
    order: usize,
    smoothing_k: f64,
    vocab: Vec<String>,
    counts: Vec<BTreeMap<String, BTreeMap<String, u64>>>,
}

/// A first-order Markov chain over POS tags with per-tag emission word
/// lists: an oracle corpus generator whose conditional tag entropies are
/// known analytically.
#[derive(Debug, Clone)]
pub struct MarkovTagModel {
    pub tags: Vec<PosTag>,
    /// Row-stochastic transition matrix; `transition[i][j]` is the
    /// probability that tag `j` follows tag `i`.
    pub transition: Vec<Vec<f64>>,
    /// Words emitted (uniformly) by each tag; parallel to `tags`.
    pub emissions: Vec<Vec<String>>,
}

impl MarkovTagModel {
    /// Convenience constructor resolving tag symbols against a tagset.
    pub fn new(
        tagset: &Tagset,
        states: &[(&str, &[f64], &[&str])],
    ) -> Result<Self> {
        let mut tags = Vec::new();
        let mut transition = Vec::new();
        let mut emissions = Vec::new();
        for &(symbol, row, words) in states {
            let tag = tagset
                .tag(symbol)
                .ok_or_else(|| Error::UnknownTag { tag: symbol.to_owned(), line: None })?;
            tags.push(tag);
            transition.push(row.to_vec());
            emissions.push(words.iter().map(|w| (*w).to_owned()).collect());
        }
        let model = MarkovTagModel { tags, transition, emissions };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tags.len();
        if n == 0 {
            return Err(Error::Config("tag chain needs at least one state".into()));
        }
        if self.transition.len() != n || self.emissions.len() != n {
            return Err(Error::Config("transition matrix and emissions must match tags".into()));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("transition row {i} has wrong length")));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!("transition row {i} has invalid entries")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("transition row {i} sums to {sum}, not 1")));
            }
        }
        if self.emissions.iter().any(Vec::is_empty) {
            return Err(Error::Config("every tag needs at least one emission word".into()));
        }
        Ok(())
    }
}

/// Samples tagged sentences from the chain: initial tag uniform, then row
/// transitions, each word drawn uniformly from its tag's emission list.
/// Deterministic given the seed.
pub fn sample_markov_tag_corpus(
    model: &MarkovTagModel,
    n_sentences: usize,
    sentence_len: usize,
    rng_seed: u64,
) -> Result<Vec<TaggedSentence>> {
    model.validate()?;
    if sentence_len == 0 {
        return Err(Error::Config("sentence length must be >= 1".into()));
    }
    let n_states = model.tags.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut sentences = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let mut state = sample_uniform_index(n_states, &mut rng);
        let mut tokens = Vec::with_capacity(sentence_len);
        for position in 0..sentence_len {
            if position > 0 {
                state = sample_categorical(&model.transition[state], &mut rng);
            }
            let words = &model.emissions[state];
            let word = words[sample_uniform_index(words.len(), &mut rng)].clone();
            tokens.push((word, model.tags[state].clone()));
        }
        sentences.push(TaggedSentence::new(tokens)?);
    }
    Ok(sentences)
}
