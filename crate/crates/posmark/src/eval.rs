//! Evaluation harness: detection metrics at fixed false-positive rates,
//! tag-preserving synonym substitution attacks, and a reproducible
//! manifest-driven experiment runner emitting JSON and CSV reports.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LexiconTagger, Tagger, Tagset, WordCategory};
use crate::detector::{z_weighted, DetectorInputs};
use crate::error::{Error, Result};
use crate::greenlist::{Vocabulary, WatermarkKey};
use crate::indeterminacy::{load_table, IndeterminacyTable};
use crate::rng::{sample_uniform_index, u01};
use crate::toylm::{ToyLm, BOS};
use crate::watermark::{generate, MaskedLm, Mode, WatermarkConfig};

/// Schema version of the experiment report format.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Detection scores of watermarked (positive) and clean (negative) texts.
#[derive(Debug, Clone, Default)]
pub struct ScorePair {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl ScorePair {
    fn validate(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::Config("both score sides must be non-empty".into()));
        }
        Ok(())
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True-positive rate at the smallest threshold where at most an `fpr`
/// fraction of negatives score strictly above it.
pub fn tpr_at_fpr(scores: &ScorePair, fpr: f64) -> Result<f64> {
    scores.validate()?;
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::Config(format!("fpr must lie in (0, 1), got {fpr}")));
    }
    let n = scores.negatives.len();
    let mut negatives = scores.negatives.clone();
    negatives.sort_by(|a, b| b.partial_cmp(a).expect("scores must not be NaN"));
    // The largest count of allowed exceedances, compared as fractions so the
    // boundary cases match a direct scan.
    let frac = |c: usize| c as f64 / n as f64;
    let mut allowed = (fpr * n as f64).floor() as usize;
    while allowed < n && frac(allowed + 1) <= fpr {
        allowed += 1;
    }
    while allowed > 0 && frac(allowed) > fpr {
        allowed -= 1;
    }
    let threshold = negatives[allowed.min(n - 1)];
    let hits = scores.positives.iter().filter(|&&p| p > threshold).count();
    Ok(hits as f64 / scores.positives.len() as f64)
}

fn f1_from_counts(tp: usize, fp: usize, n_pos: usize) -> f64 {
    let tp = tp as f64;
    let fp = fp as f64;
    let fn_ = n_pos as f64 - tp;
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

/// Best F1 over all candidate thresholds: every observed score value plus
/// the degenerate all-positive classifier. Predictions use strict `>`.
pub fn best_f1(scores: &ScorePair) -> Result<f64> {
    scores.validate()?;
    let n_pos = scores.positives.len();
    let mut all: Vec<(f64, bool)> = scores
        .positives
        .iter()
        .map(|&s| (s, true))
        .chain(scores.negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores must not be NaN"));

    // All-positive classifier (threshold below every score).
    let mut best = f1_from_counts(n_pos, scores.negatives.len(), n_pos);
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < all.len() {
        // Candidate threshold = this group's value; counts so far are the
        // items scoring strictly above it.
        best = best.max(f1_from_counts(tp, fp, n_pos));
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    Ok(best)
}

/// Synonym-substitution attack settings. Alternatives are expected to share
/// the original word's tag; [`AttackConfig::validate_tags`] checks that
/// against a tagger.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub synonym_map: HashMap<String, Vec<String>>,
    pub rate: f64,
    pub rng_seed: u64,
}

impl AttackConfig {
    pub fn new(synonym_map: HashMap<String, Vec<String>>, rate: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("attack rate must lie in [0, 1], got {rate}")));
        }
        if synonym_map.values().any(Vec::is_empty) {
            return Err(Error::Config("synonym entries must list at least one alternative".into()));
        }
        Ok(AttackConfig { synonym_map, rate, rng_seed })
    }

    /// Checks that every alternative carries the same tag as its original.
    pub fn validate_tags(&self, tagger: &dyn Tagger) -> Result<()> {
        for (word, alternatives) in &self.synonym_map {
            let original = &tagger.tag_words(&[word])[0];
            for alt in alternatives {
                let tag = &tagger.tag_words(&[alt])[0];
                if tag != original {
                    return Err(Error::Config(format!(
                        "synonym `{alt}` of `{word}` changes tag {original} -> {tag}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Replaces each mapped word independently with probability `rate` by a
/// uniformly chosen alternative. Length-preserving and deterministic given
/// the seed.
pub fn synonym_attack(words: &[String], cfg: &AttackConfig) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    words
        .iter()
        .map(|word| match cfg.synonym_map.get(word) {
            Some(alternatives) => {
                if u01(&mut rng) < cfg.rate {
                    alternatives[sample_uniform_index(alternatives.len(), &mut rng)].clone()
                } else {
                    word.clone()
                }
            }
            None => word.clone(),
        })
        .collect()
}

/// Builds a synonym map over the vocabulary where a word's alternatives are
/// all other words sharing its tag; words with no same-tag sibling (and the
/// excluded ids) are left unmapped.
pub fn tag_preserving_synonyms(
    vocab: &Vocabulary,
    tagger: &dyn Tagger,
    exclude_ids: &[u32],
) -> HashMap<String, Vec<String>> {
    let mut groups: HashMap<String, Vec<String>> = HashMap::new();
    for (id, surface) in vocab.surfaces().iter().enumerate() {
        if exclude_ids.contains(&(id as u32)) {
            continue;
        }
        let tag = tagger.tag_words(&[surface])[0].as_str().to_owned();
        groups.entry(tag).or_default().push(surface.clone());
    }
    let mut map = HashMap::new();
    for members in groups.values() {
        if members.len() < 2 {
            continue;
        }
        for word in members {
            let alternatives: Vec<String> =
                members.iter().filter(|m| *m != word).cloned().collect();
            map.insert(word.clone(), alternatives);
        }
    }
    map
}

/// Parses a synonym file: `word<TAB>alt1[<TAB>alt2...]` per line.
pub fn parse_synonyms_tsv(reader: impl BufRead) -> Result<HashMap<String, Vec<String>>> {
    let mut map = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let word = cols.next().filter(|w| !w.is_empty()).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "missing word column".into(),
        })?;
        let alternatives: Vec<String> =
            cols.filter(|c| !c.is_empty()).map(str::to_owned).collect();
        if alternatives.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("`{word}` lists no alternatives"),
            });
        }
        map.insert(word.to_owned(), alternatives);
    }
    Ok(map)
}

/// Base watermark strength: a number, or `"calibrated"` for
/// `2.0 / mean_lambda` of the supplied table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Fixed(f64),
    Named(String),
}

impl DeltaSpec {
    pub fn resolve(&self, table: &IndeterminacyTable) -> Result<f64> {
        match self {
            DeltaSpec::Fixed(v) => {
                if *v < 0.0 {
                    return Err(Error::Config(format!("delta_base must be >= 0, got {v}")));
                }
                Ok(*v)
            }
            DeltaSpec::Named(name) if name == "calibrated" => {
                WatermarkConfig::calibrated_delta(table)
            }
            DeltaSpec::Named(other) => Err(Error::Config(format!(
                "unknown delta spec `{other}` (expected a number or \"calibrated\")"
            ))),
        }
    }
}

fn default_tagset_spec() -> String {
    "ud".to_owned()
}

/// Attack schedule: substitution rates to evaluate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub rates: Vec<f64>,
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub table_path: PathBuf,
    pub lm_path: PathBuf,
    pub lexicon_path: PathBuf,
    #[serde(default = "default_tagset_spec")]
    pub tagset: String,
    pub mode: String,
    pub gamma: f64,
    pub delta_base: DeltaSpec,
    pub k: usize,
    pub key: u64,
    pub temperature: f64,
    pub n_texts: usize,
    pub gen_length: usize,
    #[serde(default)]
    pub attack: Option<AttackSchedule>,
    pub seed: u64,
}

impl ExperimentManifest {
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        serde_json::from_reader(reader)
            .map_err(|e| Error::Config(format!("invalid experiment manifest: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorMetrics {
    #[serde(rename = "tpr_at_5_fpr")]
    pub tpr_at_5_fpr: f64,
    pub best_f1: f64,
    pub mean_z_watermarked: f64,
    pub std_z_watermarked: f64,
    pub mean_z_null: f64,
    pub std_z_null: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackDetectorMetrics {
    #[serde(rename = "tpr_at_5_fpr")]
    pub tpr_at_5_fpr: f64,
    pub best_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub rate: f64,
    pub detectors: BTreeMap<String, AttackDetectorMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualitySummary {
    pub mean_nll_watermarked: f64,
    pub mean_nll_null: f64,
}

/// The JSON report of one experiment run. A pure function of the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub manifest: ExperimentManifest,
    pub resolved_delta_base: f64,
    pub table_mean_lambda: f64,
    pub detectors: BTreeMap<String, DetectorMetrics>,
    pub quality: QualitySummary,
    pub category_shares: BTreeMap<String, f64>,
    pub attack: Vec<AttackMetrics>,
}

/// Report plus the flat per-text score table.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub csv: String,
}

impl ExperimentOutput {
    pub fn report_json(&self) -> Result<String> {
        let mut json = serde_json::to_string_pretty(&self.report)?;
        json.push('\n');
        Ok(json)
    }
}

/// Resolves a tagset spec: `"ud"` for the built-in universal tagset, any
/// other value as a path to a TSV file of `tag<TAB>content|function|other`.
pub fn tagset_from_spec(spec: &str) -> Result<Tagset> {
    if spec == "ud" {
        return Ok(Tagset::universal());
    }
    let file = open_input(Path::new(spec))?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (tag, category) = match (cols.next(), cols.next(), cols.next()) {
            (Some(t), Some(c), None) => (t.to_owned(), c.to_ascii_lowercase()),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected `tag<TAB>category`, got `{line}`"),
                })
            }
        };
        let category = match category.as_str() {
            "content" => WordCategory::Content,
            "function" => WordCategory::Function,
            "other" => WordCategory::Other,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown category `{other}`"),
                })
            }
        };
        entries.push((tag, category));
    }
    let refs: Vec<(&str, WordCategory)> =
        entries.iter().map(|(t, c)| (t.as_str(), *c)).collect();
    Tagset::new(spec, &refs)
}

/// Opens a file, mapping not-found to a config-level error.
pub fn open_input(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}

struct TextScores {
    z_uniform: f64,
    z_weighted: f64,
    scored_t: usize,
    nll: f64,
    category_shares: BTreeMap<String, f64>,
}

fn score_words(
    words: &[String],
    lm: &ToyLm,
    tagger: &LexiconTagger,
    table: &IndeterminacyTable,
    key: WatermarkKey,
    gamma: f64,
    k: usize,
) -> Result<TextScores> {
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    let inputs = DetectorInputs { vocab: lm.vocab(), tagger, table, key, gamma, k };
    let report = z_weighted(&refs, &inputs)?;
    let ids: Vec<u32> = words
        .iter()
        .map(|w| {
            lm.vocab()
                .id(w)
                .ok_or_else(|| Error::Config(format!("word `{w}` outside vocabulary")))
        })
        .collect::<Result<_>>()?;
    let nll = lm.nll(&ids)?;
    Ok(TextScores {
        z_uniform: report.z_uniform,
        z_weighted: report.z_weighted,
        scored_t: report.scored_t,
        nll,
        category_shares: report.category_shares,
    })
}

fn detector_metrics(pos: &[f64], neg: &[f64]) -> Result<DetectorMetrics> {
    let pair = ScorePair { positives: pos.to_vec(), negatives: neg.to_vec() };
    let (mean_pos, std_pos) = mean_std(pos);
    let (mean_neg, std_neg) = mean_std(neg);
    Ok(DetectorMetrics {
        tpr_at_5_fpr: tpr_at_fpr(&pair, 0.05)?,
        best_f1: best_f1(&pair)?,
        mean_z_watermarked: mean_pos,
        std_z_watermarked: std_pos,
        mean_z_null: mean_neg,
        std_z_null: std_neg,
    })
}

fn attack_stream_seed(master: u64, rate_index: usize, text_index: usize) -> u64 {
    master
        .wrapping_add(1_000_003u64.wrapping_mul(rate_index as u64 + 1))
        .wrapping_add(text_index as u64)
}

fn push_csv_row(csv: &mut String, index: usize, role: &str, rate: f64, scores: &TextScores) {
    csv.push_str(&format!(
        "{index},{role},{rate},{},{},{},{}\n",
        scores.scored_t, scores.z_uniform, scores.z_weighted, scores.nll
    ));
}

/// Runs the full protocol described by a manifest: generate watermarked and
/// null texts, score both detectors, apply the attack schedule, and collect
/// metrics. The output is a pure function of the manifest; `parallel` only
/// changes how work is scheduled.
pub fn run_experiment(manifest: &ExperimentManifest, parallel: bool) -> Result<ExperimentOutput> {
    if manifest.n_texts == 0 {
        return Err(Error::Config("n_texts must be >= 1".into()));
    }
    let table = load_table(open_input(&manifest.table_path)?)?;
    let lm = ToyLm::load(open_input(&manifest.lm_path)?)?;
    let tagset = std::sync::Arc::new(tagset_from_spec(&manifest.tagset)?);
    let unknown = tagset
        .tag("X")
        .ok_or_else(|| Error::Config("tagset must declare an `X` tag for unknown words".into()))?;
    let tagger = LexiconTagger::from_tsv(
        BufReader::new(open_input(&manifest.lexicon_path)?),
        tagset.clone(),
        unknown,
    )?;

    let mode: Mode = manifest.mode.parse()?;
    let resolved_delta = manifest.delta_base.resolve(&table)?;
    let config = WatermarkConfig {
        gamma: manifest.gamma,
        delta_base: resolved_delta,
        k: manifest.k,
        mode,
        key: WatermarkKey(manifest.key),
        temperature: manifest.temperature,
    };
    config.validate()?;
    let null_config = WatermarkConfig { delta_base: 0.0, ..config };

    let masked = MaskedLm::new(&lm, lm.boundary_ids());
    let bos = lm
        .vocab()
        .id(BOS)
        .ok_or_else(|| Error::Config("language model lacks a sentence-start marker".into()))?;
    let prompt = vec![bos; manifest.k - 1];

    let n = manifest.n_texts;
    let gen_words = |cfg: WatermarkConfig, seed: u64| -> Result<Vec<String>> {
        let record = generate(&masked, &tagger, &table, &cfg, &prompt, manifest.gen_length, seed)?;
        Ok(record.surfaces(lm.vocab()).into_iter().map(str::to_owned).collect())
    };
    let run_indices = |cfg: WatermarkConfig, offset: u64| -> Result<Vec<Vec<String>>> {
        if parallel {
            (0..n)
                .into_par_iter()
                .map(|i| gen_words(cfg, manifest.seed.wrapping_add(offset + i as u64)))
                .collect()
        } else {
            (0..n)
                .map(|i| gen_words(cfg, manifest.seed.wrapping_add(offset + i as u64)))
                .collect()
        }
    };
    let watermarked = run_indices(config, 0)?;
    let nulls = run_indices(null_config, n as u64)?;

    let score_all = |texts: &[Vec<String>]| -> Result<Vec<TextScores>> {
        let score_one = |words: &Vec<String>| {
            score_words(words, &lm, &tagger, &table, config.key, config.gamma, config.k)
        };
        if parallel {
            texts.par_iter().map(score_one).collect()
        } else {
            texts.iter().map(score_one).collect()
        }
    };
    let wm_scores = score_all(&watermarked)?;
    let null_scores = score_all(&nulls)?;

    let mut csv = String::from("index,role,attack_rate,scored_t,z_uniform,z_weighted,nll\n");
    for (i, s) in wm_scores.iter().enumerate() {
        push_csv_row(&mut csv, i, "watermarked", 0.0, s);
    }
    for (i, s) in null_scores.iter().enumerate() {
        push_csv_row(&mut csv, i, "null", 0.0, s);
    }

    let mut detectors = BTreeMap::new();
    let collect = |f: fn(&TextScores) -> f64, xs: &[TextScores]| -> Vec<f64> {
        xs.iter().map(f).collect()
    };
    detectors.insert(
        "uniform".to_owned(),
        detector_metrics(
            &collect(|s| s.z_uniform, &wm_scores),
            &collect(|s| s.z_uniform, &null_scores),
        )?,
    );
    detectors.insert(
        "weighted".to_owned(),
        detector_metrics(
            &collect(|s| s.z_weighted, &wm_scores),
            &collect(|s| s.z_weighted, &null_scores),
        )?,
    );

    let mut category_shares: BTreeMap<String, f64> = BTreeMap::new();
    for scores in &wm_scores {
        for (category, share) in &scores.category_shares {
            *category_shares.entry(category.clone()).or_insert(0.0) += share;
        }
    }
    for share in category_shares.values_mut() {
        *share /= n as f64;
    }

    let quality = QualitySummary {
        mean_nll_watermarked: mean_std(&collect(|s| s.nll, &wm_scores)).0,
        mean_nll_null: mean_std(&collect(|s| s.nll, &null_scores)).0,
    };

    let mut attack_metrics = Vec::new();
    if let Some(schedule) = &manifest.attack {
        let map = tag_preserving_synonyms(lm.vocab(), &tagger, &lm.boundary_ids());
        let probe = AttackConfig::new(map.clone(), 0.0, 0)?;
        probe.validate_tags(&tagger)?;
        for (rate_index, &rate) in schedule.rates.iter().enumerate() {
            let attack_one = |(i, words): (usize, &Vec<String>)| -> Result<TextScores> {
                let cfg = AttackConfig::new(
                    map.clone(),
                    rate,
                    attack_stream_seed(manifest.seed, rate_index, i),
                )?;
                let attacked = synonym_attack(words, &cfg);
                score_words(&attacked, &lm, &tagger, &table, config.key, config.gamma, config.k)
            };
            let attacked_scores: Vec<TextScores> = if parallel {
                watermarked.par_iter().enumerate().map(attack_one).collect::<Result<_>>()?
            } else {
                watermarked.iter().enumerate().map(attack_one).collect::<Result<_>>()?
            };
            for (i, s) in attacked_scores.iter().enumerate() {
                push_csv_row(&mut csv, i, "watermarked_attacked", rate, s);
            }
            let mut per_detector = BTreeMap::new();
            for (name, project) in [
                ("uniform", (|s: &TextScores| s.z_uniform) as fn(&TextScores) -> f64),
                ("weighted", |s: &TextScores| s.z_weighted),
            ] {
                let pair = ScorePair {
                    positives: attacked_scores.iter().map(project).collect(),
                    negatives: null_scores.iter().map(project).collect(),
                };
                per_detector.insert(
                    name.to_owned(),
                    AttackDetectorMetrics {
                        tpr_at_5_fpr: tpr_at_fpr(&pair, 0.05)?,
                        best_f1: best_f1(&pair)?,
                    },
                );
            }
            attack_metrics.push(AttackMetrics { rate, detectors: per_detector });
        }
    }

    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        manifest: manifest.clone(),
        resolved_delta_base: resolved_delta,
        table_mean_lambda: table.mean_lambda(),
        detectors,
        quality,
        category_shares,
        attack: attack_metrics,
    };
    Ok(ExperimentOutput { report, csv })
}
