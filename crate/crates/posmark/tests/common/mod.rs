//! Shared test fixture: a synthetic tagged corpus drawn from a known tag
//! chain, with the table, toy language model, and lexicon tagger estimated
//! from it. Built once per test binary.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use posmark::corpus::{LexiconTagger, TaggedSentence, Tagset};
use posmark::detector::DetectorInputs;
use posmark::eval::{AttackSchedule, DeltaSpec, ExperimentManifest};
use posmark::greenlist::WatermarkKey;
use posmark::indeterminacy::{build_lambda_table, count_ngrams, save_table, IndeterminacyTable};
use posmark::toylm::{sample_markov_tag_corpus, train_toy_lm, MarkovTagModel, ToyLm, BOS};

pub const WORDS_PER_TAG: usize = 40;
pub const FIXTURE_SENTENCES: usize = 3000;
pub const FIXTURE_SENTENCE_LEN: usize = 12;
pub const FIXTURE_SEED: u64 = 101;

pub struct Fixture {
    pub tagset: Arc<Tagset>,
    pub corpus: Vec<TaggedSentence>,
    pub table: IndeterminacyTable,
    pub lm: ToyLm,
    pub tagger: LexiconTagger,
}

/// Tag chain with deliberately varied row entropies: some transitions are
/// forced (ADJ -> NOUN), some maximally free.
pub fn tag_chain(tagset: &Tagset) -> MarkovTagModel {
    let words = |prefix: &str| -> Vec<String> {
        (0..WORDS_PER_TAG).map(|i| format!("{prefix}{i:02}")).collect()
    };
    let emit: Vec<Vec<String>> = ["det", "adj", "noun", "verb", "adp", "adv", "conj", "punct"]
        .iter()
        .map(|p| words(p))
        .collect();
    let states: Vec<(&str, &[f64], Vec<&str>)> = vec![
        ("DET", &[0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0][..], emit[0].iter().map(String::as_str).collect()),
        ("ADJ", &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0][..], emit[1].iter().map(String::as_str).collect()),
        ("NOUN", &[0.0, 0.0, 0.0, 0.6, 0.15, 0.0, 0.1, 0.15][..], emit[2].iter().map(String::as_str).collect()),
        ("VERB", &[0.5, 0.0, 0.2, 0.0, 0.1, 0.2, 0.0, 0.0][..], emit[3].iter().map(String::as_str).collect()),
        ("ADP", &[0.7, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0][..], emit[4].iter().map(String::as_str).collect()),
        ("ADV", &[0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0, 0.4][..], emit[5].iter().map(String::as_str).collect()),
        ("CCONJ", &[0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0][..], emit[6].iter().map(String::as_str).collect()),
        ("PUNCT", &[0.5, 0.0, 0.0, 0.0, 0.0, 0.2, 0.3, 0.0][..], emit[7].iter().map(String::as_str).collect()),
    ];
    let state_refs: Vec<(&str, &[f64], &[&str])> =
        states.iter().map(|(t, row, ws)| (*t, *row, ws.as_slice())).collect();
    MarkovTagModel::new(tagset, &state_refs).expect("fixture chain is valid")
}

fn build_fixture() -> Fixture {
    let tagset = Arc::new(Tagset::universal());
    let chain = tag_chain(&tagset);
    let corpus =
        sample_markov_tag_corpus(&chain, FIXTURE_SENTENCES, FIXTURE_SENTENCE_LEN, FIXTURE_SEED)
            .expect("fixture corpus");
    let counts = count_ngrams(&corpus, 2, &tagset).expect("fixture counts");
    let table = build_lambda_table(&counts)
        .expect("fixture table")
        .with_corpus_ids(vec!["synthetic-chain".into()]);
    let lm = train_toy_lm(&corpus, 2, 0.5).expect("fixture lm");

    let mut lexicon = std::collections::HashMap::new();
    for (tag, words) in chain.tags.iter().zip(&chain.emissions) {
        for word in words {
            lexicon.insert(word.clone(), tag.clone());
        }
    }
    let unknown = tagset.tag("X").unwrap();
    let tagger = LexiconTagger::new(tagset.clone(), lexicon, unknown).expect("fixture tagger");

    Fixture { tagset, corpus, table, lm, tagger }
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

pub fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(build_fixture)
}

impl Fixture {
    pub fn prompt(&self, k: usize) -> Vec<u32> {
        vec![self.lm.vocab().id(BOS).unwrap(); k - 1]
    }

    pub fn detector_inputs(&self, key: WatermarkKey, gamma: f64, k: usize) -> DetectorInputs<'_> {
        DetectorInputs {
            vocab: self.lm.vocab(),
            tagger: &self.tagger,
            table: &self.table,
            key,
            gamma,
            k,
        }
    }

    /// Writes table, model, and lexicon files; returns their paths.
    pub fn write_artifacts(&self, dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let table_path = dir.join("table.json");
        let lm_path = dir.join("lm.json");
        let lexicon_path = dir.join("lexicon.tsv");
        save_table(&self.table, BufWriter::new(File::create(&table_path).unwrap())).unwrap();
        self.lm.save(BufWriter::new(File::create(&lm_path).unwrap())).unwrap();
        self.tagger.write_tsv(BufWriter::new(File::create(&lexicon_path).unwrap())).unwrap();
        (table_path, lm_path, lexicon_path)
    }

    pub fn manifest(
        &self,
        dir: &Path,
        n_texts: usize,
        gen_length: usize,
        attack_rates: &[f64],
        seed: u64,
    ) -> ExperimentManifest {
        let (table_path, lm_path, lexicon_path) = self.write_artifacts(dir);
        ExperimentManifest {
            table_path,
            lm_path,
            lexicon_path,
            tagset: "ud".into(),
            mode: "stela".into(),
            gamma: 0.5,
            delta_base: DeltaSpec::Named("calibrated".into()),
            k: 2,
            key: 0xFEED_5EED,
            temperature: 0.7,
            n_texts,
            gen_length,
            attack: if attack_rates.is_empty() {
                None
            } else {
                Some(AttackSchedule { rates: attack_rates.to_vec() })
            },
            seed,
        }
    }
}

/// Normalized entropy of a two-way split, the analytic indeterminacy of a
/// binary transition row.
pub fn analytic_lambda2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    -(p * p.ln() + q * q.ln()) / 2.0_f64.ln()
}
