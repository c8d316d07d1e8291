//! Linguistic-indeterminacy estimation: the normalized conditional entropy of
//! the next POS tag given the preceding tag context, estimated from tagged
//! corpora and served through a lookup table with suffix backoff.
//!
//! For a context `c` with observed next-tag distribution `P(.|c)` the
//! indeterminacy is `H(P) / ln K` where `K` is the number of distinct tags
//! seen after `c`; a context followed by a single tag has indeterminacy 0.
//! Values always land in `[0, 1]`: 0 means the next word class is forced,
//! 1 means every observed option is equally likely.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::corpus::{PosTag, TaggedSentence, Tagset};
use crate::error::{Error, Result};

/// Schema version of the table file format.
pub const TABLE_SCHEMA_VERSION: u32 = 1;

/// Raw next-tag frequencies for one context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextCounts {
    total: u64,
    next: HashMap<PosTag, u64>,
}

impl ContextCounts {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn next_counts(&self) -> &HashMap<PosTag, u64> {
        &self.next
    }
}

/// POS n-gram frequencies at a fixed order `k`: contexts are the `k-1`
/// preceding tags, counted sentence-internally only.
#[derive(Debug, Clone)]
pub struct NGramCounts {
    k: usize,
    tagset_id: String,
    contexts: HashMap<Vec<PosTag>, ContextCounts>,
}

impl NGramCounts {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tagset_id(&self) -> &str {
        &self.tagset_id
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn contexts(&self) -> impl Iterator<Item = (&[PosTag], &ContextCounts)> {
        self.contexts.iter().map(|(c, n)| (c.as_slice(), n))
    }

    pub fn ctx_count(&self, context: &[PosTag]) -> u64 {
        self.contexts.get(context).map_or(0, |c| c.total)
    }

    pub fn next_count(&self, context: &[PosTag], tag: &PosTag) -> u64 {
        self.contexts
            .get(context)
            .and_then(|c| c.next.get(tag))
            .copied()
            .unwrap_or(0)
    }
}

/// Counts POS n-grams of order `k` over the sentences. Each sentence of
/// length `L` contributes exactly `max(0, L - k + 1)` context/next pairs;
/// contexts never cross sentence boundaries.
pub fn count_ngrams(
    sentences: &[TaggedSentence],
    k: usize,
    tagset: &Tagset,
) -> Result<NGramCounts> {
    if k < 2 {
        return Err(Error::Config(format!("context size k must be >= 2, got {k}")));
    }
    let mut contexts: HashMap<Vec<PosTag>, ContextCounts> = HashMap::new();
    for sentence in sentences {
        let tags: Vec<&PosTag> = sentence.tags().collect();
        if tags.len() < k {
            continue;
        }
        for t in (k - 1)..tags.len() {
            let context: Vec<PosTag> = tags[t - (k - 1)..t].iter().map(|&x| x.clone()).collect();
            let entry = contexts.entry(context).or_default();
            entry.total += 1;
            *entry.next.entry(tags[t].clone()).or_insert(0) += 1;
        }
    }
    Ok(NGramCounts { k, tagset_id: tagset.id().to_owned(), contexts })
}

/// Normalized entropy of a next-tag count distribution. Tags are visited in
/// sorted order so the float result is reproducible across runs.
fn lambda_from_counts(counts: &ContextCounts) -> f64 {
    if counts.next.len() <= 1 {
        return 0.0;
    }
    let mut pairs: Vec<(&PosTag, u64)> = counts.next.iter().map(|(t, &c)| (t, c)).collect();
    pairs.sort();
    let total = counts.total as f64;
    let mut h = 0.0;
    for (_, c) in pairs {
        let p = c as f64 / total;
        h -= p * p.ln();
    }
    (h / (counts.next.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Normalized entropy of an explicit probability distribution; `K` is the
/// support size (strictly positive entries).
fn lambda_from_probs(probs: &[f64]) -> f64 {
    let support: Vec<f64> = probs.iter().copied().filter(|&p| p > 0.0).collect();
    if support.len() <= 1 {
        return 0.0;
    }
    let mut h = 0.0;
    for p in &support {
        h -= p * p.ln();
    }
    (h / (support.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Collapses order-`k` counts to order `m` by keeping the last `m-1` context
/// tags. `m == k` returns a clone of the input map.
fn marginalize(counts: &NGramCounts, m: usize) -> HashMap<Vec<PosTag>, ContextCounts> {
    let keep = m - 1;
    let mut out: HashMap<Vec<PosTag>, ContextCounts> = HashMap::new();
    for (context, cc) in &counts.contexts {
        let suffix: Vec<PosTag> = context[context.len() - keep..].to_vec();
        let entry = out.entry(suffix).or_default();
        entry.total += cc.total;
        for (tag, &c) in &cc.next {
            *entry.next.entry(tag.clone()).or_insert(0) += c;
        }
    }
    out
}

/// The precomputed indeterminacy lookup table.
///
/// `orders` holds one entry map per n-gram order from 2 up to `k`; the
/// lower orders are derived from the same counts and serve as the suffix
/// backoff chain. `mean_lambda` is the unweighted mean over the distinct
/// top-order contexts and is the final backoff value.
#[derive(Debug, Clone, PartialEq)]
pub struct IndeterminacyTable {
    k: usize,
    tagset_id: String,
    orders: BTreeMap<usize, HashMap<Vec<PosTag>, f64>>,
    mean_lambda: f64,
    corpus_ids: Vec<String>,
}

impl IndeterminacyTable {
    /// Raw constructor; validates order keys, context arity, and value range.
    pub fn from_entries(
        k: usize,
        tagset_id: impl Into<String>,
        orders: BTreeMap<usize, HashMap<Vec<PosTag>, f64>>,
        mean_lambda: f64,
        corpus_ids: Vec<String>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("context size k must be >= 2, got {k}")));
        }
        if !(0.0..=1.0).contains(&mean_lambda) {
            return Err(Error::Config(format!("mean_lambda {mean_lambda} outside [0, 1]")));
        }
        for (&m, entries) in &orders {
            if m < 2 || m > k {
                return Err(Error::Config(format!("order {m} outside 2..={k}")));
            }
            for (context, &lambda) in entries {
                if context.len() != m - 1 {
                    return Err(Error::Config(format!(
                        "context arity {} does not match order {m}",
                        context.len()
                    )));
                }
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
                }
            }
        }
        Ok(IndeterminacyTable {
            k,
            tagset_id: tagset_id.into(),
            orders,
            mean_lambda,
            corpus_ids,
        })
    }

    /// A table that answers every lookup with the same value: one order-2
    /// entry per tag plus a matching mean, so both the backoff hit and the
    /// final fallback return `lambda`.
    pub fn constant(k: usize, tagset: &Tagset, lambda: f64) -> Result<Self> {
        let entries: HashMap<Vec<PosTag>, f64> =
            tagset.tags().iter().map(|t| (vec![t.clone()], lambda)).collect();
        let mut orders = BTreeMap::new();
        orders.insert(2, entries);
        Self::from_entries(k, tagset.id(), orders, lambda, Vec::new())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tagset_id(&self) -> &str {
        &self.tagset_id
    }

    pub fn mean_lambda(&self) -> f64 {
        self.mean_lambda
    }

    pub fn corpus_ids(&self) -> &[String] {
        &self.corpus_ids
    }

    pub fn with_corpus_ids(mut self, corpus_ids: Vec<String>) -> Self {
        self.corpus_ids = corpus_ids;
        self
    }

    /// Entries at the top order (contexts of `k-1` tags).
    pub fn entries(&self) -> impl Iterator<Item = (&[PosTag], f64)> {
        self.orders
            .get(&self.k)
            .into_iter()
            .flat_map(|m| m.iter().map(|(c, &l)| (c.as_slice(), l)))
    }

    pub fn num_entries(&self) -> usize {
        self.orders.values().map(HashMap::len).sum()
    }

    /// Indeterminacy of a context, total over all inputs: exact match on the
    /// last `k-1` tags when present, else the longest seen suffix from the
    /// lower-order chain, else the table mean.
    pub fn lookup(&self, context: &[PosTag]) -> f64 {
        let max_len = self.k - 1;
        let context = if context.len() > max_len {
            &context[context.len() - max_len..]
        } else {
            context
        };
        for len in (1..=context.len()).rev() {
            let suffix = &context[context.len() - len..];
            if let Some(entries) = self.orders.get(&(len + 1)) {
                if let Some(&lambda) = entries.get(suffix) {
                    return lambda;
                }
            }
        }
        self.mean_lambda
    }

    /// Frequency-weighted mean indeterminacy: contexts weighted by their
    /// occurrence count instead of counted once each.
    pub fn frequency_weighted_mean(counts: &NGramCounts) -> f64 {
        let mut pairs: Vec<(&[PosTag], &ContextCounts)> = counts.contexts().collect();
        pairs.sort_by_key(|(c, _)| *c);
        let mut weighted = 0.0;
        let mut total = 0u64;
        for (_, cc) in pairs {
            weighted += cc.total as f64 * lambda_from_counts(cc);
            total += cc.total;
        }
        if total == 0 {
            0.0
        } else {
            weighted / total as f64
        }
    }
}

/// Mean over a top-order entry map, summed in sorted-context order so the
/// result is reproducible.
fn mean_over_entries(entries: &HashMap<Vec<PosTag>, f64>) -> f64 {
    let mut pairs: Vec<(&Vec<PosTag>, f64)> = entries.iter().map(|(c, &l)| (c, l)).collect();
    pairs.sort_by_key(|(c, _)| *c);
    let sum: f64 = pairs.iter().map(|(_, l)| l).sum();
    sum / entries.len() as f64
}

/// Builds the indeterminacy table from order-`k` counts. Lower-order backoff
/// entries are derived from the same counts by suffix marginalization.
pub fn build_lambda_table(counts: &NGramCounts) -> Result<IndeterminacyTable> {
    if counts.is_empty() {
        return Err(Error::Config("no contexts counted: corpus too small for k".into()));
    }
    let mut orders = BTreeMap::new();
    for m in 2..=counts.k {
        let source = if m == counts.k {
            counts.contexts.clone()
        } else {
            marginalize(counts, m)
        };
        let entries: HashMap<Vec<PosTag>, f64> =
            source.iter().map(|(c, cc)| (c.clone(), lambda_from_counts(cc))).collect();
        orders.insert(m, entries);
    }
    let mean_lambda = mean_over_entries(&orders[&counts.k]);
    IndeterminacyTable::from_entries(counts.k, counts.tagset_id.clone(), orders, mean_lambda, Vec::new())
}

/// Builds a table by averaging the conditional probabilities of two count
/// sets context-wise. Contexts present in only one source keep that source's
/// distribution; for shared contexts each next-tag probability is the plain
/// average of the two corpus-level probabilities (zero where unseen).
pub fn merge_tables_by_probability(
    counts_a: &NGramCounts,
    counts_b: &NGramCounts,
) -> Result<IndeterminacyTable> {
    if counts_a.k != counts_b.k {
        return Err(Error::Config(format!(
            "cannot merge counts with different k: {} vs {}",
            counts_a.k, counts_b.k
        )));
    }
    if counts_a.tagset_id != counts_b.tagset_id {
        return Err(Error::Config(format!(
            "cannot merge counts over different tagsets: `{}` vs `{}`",
            counts_a.tagset_id, counts_b.tagset_id
        )));
    }
    if counts_a.is_empty() && counts_b.is_empty() {
        return Err(Error::Config("no contexts counted: corpora too small for k".into()));
    }

    let k = counts_a.k;
    let mut orders = BTreeMap::new();
    for m in 2..=k {
        let map_a = marginalize(counts_a, m);
        let map_b = marginalize(counts_b, m);
        let mut entries: HashMap<Vec<PosTag>, f64> = HashMap::new();
        let contexts: std::collections::BTreeSet<&Vec<PosTag>> =
            map_a.keys().chain(map_b.keys()).collect();
        for context in contexts {
            let lambda = match (map_a.get(context), map_b.get(context)) {
                (Some(a), Some(b)) => {
                    let mut tags: Vec<&PosTag> = a.next.keys().chain(b.next.keys()).collect();
                    tags.sort();
                    tags.dedup();
                    let probs: Vec<f64> = tags
                        .iter()
                        .map(|t| {
                            let pa = a.next.get(*t).copied().unwrap_or(0) as f64 / a.total as f64;
                            let pb = b.next.get(*t).copied().unwrap_or(0) as f64 / b.total as f64;
                            (pa + pb) / 2.0
                        })
                        .collect();
                    lambda_from_probs(&probs)
                }
                (Some(single), None) | (None, Some(single)) => lambda_from_counts(single),
                (None, None) => unreachable!("context came from one of the maps"),
            };
            entries.insert(context.clone(), lambda);
        }
        orders.insert(m, entries);
    }
    let mean_lambda = mean_over_entries(&orders[&k]);
    IndeterminacyTable::from_entries(k, counts_a.tagset_id.clone(), orders, mean_lambda, Vec::new())
}

/// Standalone indeterminacy lookup, mirroring [`IndeterminacyTable::lookup`].
pub fn lookup_lambda(table: &IndeterminacyTable, context: &[PosTag]) -> f64 {
    table.lookup(context)
}

fn escape_json(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// 17 significant digits: enough to reproduce any f64 bit-exactly on load.
fn format_lambda(v: f64) -> String {
    format!("{v:.16e}")
}

/// Saves the table as versioned JSON with deterministically sorted keys and
/// values printed to 17 significant digits.
pub fn save_table(table: &IndeterminacyTable, mut writer: impl Write) -> Result<()> {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"version\": {},\n", TABLE_SCHEMA_VERSION));
    out.push_str(&format!("  \"k\": {},\n", table.k));
    out.push_str(&format!("  \"tagset_id\": \"{}\",\n", escape_json(&table.tagset_id)));
    out.push_str(&format!("  \"mean_lambda\": {},\n", format_lambda(table.mean_lambda)));
    let ids: Vec<String> =
        table.corpus_ids.iter().map(|i| format!("\"{}\"", escape_json(i))).collect();
    out.push_str(&format!("  \"corpus_ids\": [{}],\n", ids.join(", ")));
    out.push_str("  \"orders\": {\n");
    let mut first_order = true;
    for (m, entries) in &table.orders {
        if !first_order {
            out.push_str(",\n");
        }
        first_order = false;
        out.push_str(&format!("    \"{m}\": {{\n"));
        let mut sorted: BTreeMap<String, f64> = BTreeMap::new();
        for (context, &lambda) in entries {
            let key =
                context.iter().map(PosTag::as_str).collect::<Vec<_>>().join("|");
            sorted.insert(key, lambda);
        }
        let lines: Vec<String> = sorted
            .iter()
            .map(|(key, &lambda)| {
                format!("      \"{}\": {}", escape_json(key), format_lambda(lambda))
            })
            .collect();
        out.push_str(&lines.join(",\n"));
        out.push_str("\n    }");
    }
    out.push_str("\n  }\n}\n");
    writer.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct RawTableFile {
    version: u32,
    k: usize,
    tagset_id: String,
    mean_lambda: f64,
    corpus_ids: Vec<String>,
    orders: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Loads and validates a table file written by [`save_table`].
pub fn load_table(reader: impl Read) -> Result<IndeterminacyTable> {
    let raw: RawTableFile =
        serde_json::from_reader(reader).map_err(|e| Error::TableLoad(e.to_string()))?;
    if raw.version != TABLE_SCHEMA_VERSION {
        return Err(Error::TableLoad(format!(
            "unsupported schema version {} (expected {})",
            raw.version, TABLE_SCHEMA_VERSION
        )));
    }
    if raw.k < 2 {
        return Err(Error::TableLoad(format!("k must be >= 2, got {}", raw.k)));
    }
    if !(0.0..=1.0).contains(&raw.mean_lambda) {
        return Err(Error::TableLoad(format!("mean_lambda {} outside [0, 1]", raw.mean_lambda)));
    }
    let mut orders = BTreeMap::new();
    let mut total_entries = 0usize;
    for (order_key, raw_entries) in raw.orders {
        let m: usize = order_key
            .parse()
            .map_err(|_| Error::TableLoad(format!("invalid order key `{order_key}`")))?;
        if m < 2 || m > raw.k {
            return Err(Error::TableLoad(format!("order {m} outside 2..={}", raw.k)));
        }
        let mut entries = HashMap::with_capacity(raw_entries.len());
        for (context_key, lambda) in raw_entries {
            let symbols: Vec<&str> = context_key.split('|').collect();
            if symbols.len() != m - 1 || symbols.iter().any(|s| s.is_empty()) {
                return Err(Error::TableLoad(format!(
                    "corrupt context `{context_key}` for order {m}"
                )));
            }
            if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
                return Err(Error::TableLoad(format!(
                    "lambda {lambda} for context `{context_key}` outside [0, 1]"
                )));
            }
            let context: Vec<PosTag> = symbols.iter().map(|s| PosTag::from_symbol(s)).collect();
            entries.insert(context, lambda);
        }
        total_entries += entries.len();
        orders.insert(m, entries);
    }
    if total_entries == 0 {
        return Err(Error::TableLoad("table has no entries".into()));
    }
    IndeterminacyTable::from_entries(raw.k, raw.tagset_id, orders, raw.mean_lambda, raw.corpus_ids)
        .map_err(|e| Error::TableLoad(e.to_string()))
}
