//! Command-line workflow: estimate an indeterminacy table, train the toy
//! language model, generate watermarked text, detect, attack, and evaluate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use posmark::corpus::{self, LexiconTagger, TagColumn, TaggedSentence, Tagset};
use posmark::detector::{decide, DetectionReport, DetectorInputs};
use posmark::error::{Error, Result};
use posmark::eval::{
    open_input, parse_synonyms_tsv, run_experiment, synonym_attack, tagset_from_spec,
    AttackConfig, DeltaSpec, ExperimentManifest,
};
use posmark::greenlist::WatermarkKey;
use posmark::indeterminacy::{
    build_lambda_table, count_ngrams, load_table, merge_tables_by_probability, save_table,
    IndeterminacyTable,
};
use posmark::strategy;
use posmark::toylm::{train_toy_lm, ToyLm, BOS};
use posmark::watermark::{generate, MaskedLm, Mode, WatermarkConfig};

#[derive(Parser)]
#[command(
    name = "posmark",
    version,
    about = "Green-list text watermarking with POS-entropy adaptive strength"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate an indeterminacy table from POS-tagged corpora
    Estimate(EstimateArgs),
    /// Train the bundled n-gram language model
    TrainLm(TrainLmArgs),
    /// Generate watermarked texts with the toy language model
    Generate(GenerateArgs),
    /// Score texts for the watermark (one JSON verdict per line)
    Detect(DetectArgs),
    /// Run a manifest-driven experiment and write JSON + CSV reports
    Evaluate(EvaluateArgs),
    /// Apply a tag-preserving synonym-substitution attack to texts
    Attack(AttackArgs),
}

#[derive(clap::Args)]
struct EstimateArgs {
    /// Tagged corpus file; repeat for multiple corpora
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Corpus format: conllu or tsv
    #[arg(long, default_value = "conllu")]
    format: String,
    /// CoNLL-U tag column: upos or xpos
    #[arg(long = "tag-column", default_value = "upos")]
    tag_column: String,
    /// Tagset: "ud" or a path to a tag<TAB>category TSV
    #[arg(long, default_value = "ud")]
    tagset: String,
    /// POS context size (n-gram order)
    #[arg(long)]
    k: usize,
    /// Output table path
    #[arg(long)]
    out: PathBuf,
    /// Average the conditional probabilities of exactly two corpora instead
    /// of pooling their counts
    #[arg(long = "merge-prob")]
    merge_prob: bool,
    /// Also write a majority-tag lexicon induced from the corpora
    #[arg(long = "emit-lexicon")]
    emit_lexicon: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainLmArgs {
    /// Corpus file; repeat for multiple corpora
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Corpus format: conllu, tsv, or text (one sentence per line)
    #[arg(long, default_value = "conllu")]
    format: String,
    #[arg(long = "tag-column", default_value = "upos")]
    tag_column: String,
    #[arg(long, default_value = "ud")]
    tagset: String,
    /// Model n-gram order
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Additive smoothing constant
    #[arg(long, default_value_t = 0.5)]
    smoothing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    /// Lexicon TSV (surface<TAB>tag) used for insertion-time tagging
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value = "ud")]
    tagset: String,
    /// Insertion mode: stela (adaptive strength) or kgw (static)
    #[arg(long, default_value = "stela")]
    mode: String,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Base strength: a number or "calibrated" (2.0 / mean indeterminacy)
    #[arg(long, default_value = "calibrated")]
    delta: String,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    key: u64,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    /// Number of texts
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Tokens per text
    #[arg(long, default_value_t = 200)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file: one whitespace-joined token sequence per line
    #[arg(long)]
    out: PathBuf,
    /// Optional per-text diagnostics (JSON lines)
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DetectArgs {
    #[arg(long)]
    table: PathBuf,
    /// Language model file; only its vocabulary is read
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value = "ud")]
    tagset: String,
    #[arg(long, default_value_t = 0)]
    key: u64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Detector: weighted (indeterminacy scoring) or uniform (plain count)
    #[arg(long, default_value = "weighted")]
    mode: String,
    #[arg(long, default_value_t = 4.0)]
    threshold: f64,
    /// Input texts, one per line
    #[arg(long = "in")]
    input: PathBuf,
    /// Verdicts file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include per-token scores in weighted reports
    #[arg(long)]
    verbose: bool,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Experiment manifest (JSON)
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for report.json and scores.csv
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
    /// Run single-threaded (output is identical either way)
    #[arg(long)]
    serial: bool,
}

#[derive(clap::Args)]
struct AttackArgs {
    /// Input texts, one per line
    #[arg(long = "in")]
    input: PathBuf,
    /// Synonym TSV: word<TAB>alt1[<TAB>alt2...]
    #[arg(long)]
    synonyms: PathBuf,
    /// Per-word substitution probability
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::TrainLm(args) => run_train_lm(args),
        Command::Generate(args) => run_generate(args),
        Command::Detect(args) => run_detect(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Attack(args) => run_attack(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn parse_tag_column(tag_column: &str) -> Result<TagColumn> {
    match tag_column {
        "upos" => Ok(TagColumn::Upos),
        "xpos" => Ok(TagColumn::Xpos),
        other => Err(Error::Config(format!("unknown tag column `{other}` (expected upos|xpos)"))),
    }
}

fn parse_corpus(
    path: &Path,
    format: &str,
    tagset: &Tagset,
    tag_column: &str,
    allow_plain_text: bool,
) -> Result<Vec<TaggedSentence>> {
    let reader = BufReader::new(open_input(path)?);
    match format {
        "conllu" => corpus::parse_conllu(reader, tagset, parse_tag_column(tag_column)?),
        "tsv" => corpus::parse_tsv(reader, tagset),
        "text" if allow_plain_text => {
            let unknown = tagset.tag("X").ok_or_else(|| {
                Error::Config("tagset must declare an `X` tag for plain-text input".into())
            })?;
            let mut sentences = Vec::new();
            for line in reader.lines() {
                let line = line?;
                let words: Vec<&str> = line.split_whitespace().collect();
                if words.is_empty() {
                    continue;
                }
                sentences.push(TaggedSentence::new(
                    words.into_iter().map(|w| (w.to_owned(), unknown.clone())).collect(),
                )?);
            }
            Ok(sentences)
        }
        other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
    }
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Majority tag per surface, ties resolved toward the smaller tag symbol.
fn induce_lexicon(sentences: &[TaggedSentence]) -> Vec<(String, String)> {
    let mut counts: HashMap<&str, HashMap<&str, u64>> = HashMap::new();
    for sentence in sentences {
        for (surface, tag) in sentence.tokens() {
            *counts.entry(surface).or_default().entry(tag.as_str()).or_insert(0) += 1;
        }
    }
    let mut lexicon: Vec<(String, String)> = counts
        .into_iter()
        .map(|(surface, tags)| {
            let mut ranked: Vec<(&str, u64)> = tags.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            (surface.to_owned(), ranked[0].0.to_owned())
        })
        .collect();
    lexicon.sort();
    lexicon
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    let tagset = tagset_from_spec(&args.tagset)?;
    let mut corpora = Vec::new();
    for input in &args.inputs {
        corpora.push(parse_corpus(input, &args.format, &tagset, &args.tag_column, false)?);
    }
    let corpus_ids: Vec<String> =
        args.inputs.iter().map(|p| p.display().to_string()).collect();

    let table: IndeterminacyTable = if args.merge_prob {
        if corpora.len() != 2 {
            return Err(Error::Config(format!(
                "--merge-prob averages exactly two corpora, got {}",
                corpora.len()
            )));
        }
        let counts_a = count_ngrams(&corpora[0], args.k, &tagset)?;
        let counts_b = count_ngrams(&corpora[1], args.k, &tagset)?;
        merge_tables_by_probability(&counts_a, &counts_b)?.with_corpus_ids(corpus_ids)
    } else {
        let pooled: Vec<TaggedSentence> = corpora.iter().flatten().cloned().collect();
        let counts = count_ngrams(&pooled, args.k, &tagset)?;
        build_lambda_table(&counts)?.with_corpus_ids(corpus_ids)
    };

    save_table(&table, create_output(&args.out)?)?;

    // Both context-level and frequency-weighted means, for calibration.
    let pooled: Vec<TaggedSentence> = corpora.iter().flatten().cloned().collect();
    let pooled_counts = count_ngrams(&pooled, args.k, &tagset)?;
    println!("contexts: {}", table.num_entries());
    println!("mean_lambda: {:.6}", table.mean_lambda());
    println!(
        "mean_lambda_frequency_weighted: {:.6}",
        IndeterminacyTable::frequency_weighted_mean(&pooled_counts)
    );
    println!("table written to {}", args.out.display());

    if let Some(lexicon_path) = &args.emit_lexicon {
        let mut writer = create_output(lexicon_path)?;
        for (surface, tag) in induce_lexicon(&pooled) {
            writeln!(writer, "{surface}\t{tag}")?;
        }
        println!("lexicon written to {}", lexicon_path.display());
    }
    Ok(())
}

fn run_train_lm(args: TrainLmArgs) -> Result<()> {
    let tagset = tagset_from_spec(&args.tagset)?;
    let mut sentences = Vec::new();
    for input in &args.inputs {
        sentences.extend(parse_corpus(input, &args.format, &tagset, &args.tag_column, true)?);
    }
    let lm = train_toy_lm(&sentences, args.order, args.smoothing)?;
    lm.save(create_output(&args.out)?)?;
    println!(
        "trained order-{} model: vocabulary {} tokens, written to {}",
        lm.order(),
        lm.vocab().len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GenerationDiagnostics {
    schema_version: u32,
    index: usize,
    seed: u64,
    green_fraction: f64,
    mean_lambda: f64,
    mean_delta: f64,
}

fn load_tagger(lexicon: &Path, tagset_spec: &str) -> Result<LexiconTagger> {
    let tagset = Arc::new(tagset_from_spec(tagset_spec)?);
    let unknown = tagset
        .tag("X")
        .ok_or_else(|| Error::Config("tagset must declare an `X` tag for unknown words".into()))?;
    LexiconTagger::from_tsv(BufReader::new(open_input(lexicon)?), tagset, unknown)
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let table = load_table(open_input(&args.table)?)?;
    let lm = ToyLm::load(open_input(&args.lm)?)?;
    let tagger = load_tagger(&args.lexicon, &args.tagset)?;

    let mode: Mode = args.mode.parse()?;
    let delta_spec = match args.delta.as_str() {
        "calibrated" => DeltaSpec::Named("calibrated".to_owned()),
        number => DeltaSpec::Fixed(number.parse::<f64>().map_err(|_| {
            Error::Config(format!("invalid --delta `{number}` (expected a number or calibrated)"))
        })?),
    };
    let delta_base = delta_spec.resolve(&table)?;
    println!(
        "resolved delta_base = {delta_base} (mode {mode}, table mean_lambda {})",
        table.mean_lambda()
    );

    let config = WatermarkConfig {
        gamma: args.gamma,
        delta_base,
        k: args.k,
        mode,
        key: WatermarkKey(args.key),
        temperature: args.temperature,
    };
    let masked = MaskedLm::new(&lm, lm.boundary_ids());
    let bos = lm
        .vocab()
        .id(BOS)
        .ok_or_else(|| Error::Config("language model lacks a sentence-start marker".into()))?;
    let prompt = vec![bos; args.k - 1];

    let mut out = create_output(&args.out)?;
    let mut diagnostics = match &args.diagnostics {
        Some(path) => Some(create_output(path)?),
        None => None,
    };
    let mut green_total = 0.0;
    for i in 0..args.n {
        let seed = args.seed.wrapping_add(i as u64);
        let record = generate(&masked, &tagger, &table, &config, &prompt, args.len, seed)?;
        writeln!(out, "{}", record.surfaces(lm.vocab()).join(" "))?;
        green_total += record.green_fraction();
        if let Some(writer) = diagnostics.as_mut() {
            let line = GenerationDiagnostics {
                schema_version: 1,
                index: i,
                seed,
                green_fraction: record.green_fraction(),
                mean_lambda: record.mean_lambda(),
                mean_delta: record.mean_delta(),
            };
            writeln!(writer, "{}", serde_json::to_string(&line)?)?;
        }
    }
    println!(
        "generated {} texts of {} tokens (mean green fraction {:.4}) -> {}",
        args.n,
        args.len,
        green_total / args.n.max(1) as f64,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    schema_version: u32,
    index: usize,
    mode: &'a str,
    scored_t: usize,
    z: f64,
    threshold: f64,
    watermarked: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<DetectionReport>,
}

fn run_detect(args: DetectArgs) -> Result<()> {
    let table = load_table(open_input(&args.table)?)?;
    let lm = ToyLm::load(open_input(&args.lm)?)?;
    let tagger = load_tagger(&args.lexicon, &args.tagset)?;
    let detector = strategy::detector(&args.mode).ok_or_else(|| {
        Error::Config(format!(
            "unknown detector `{}` (expected one of: {})",
            args.mode,
            strategy::detector_names().join(", ")
        ))
    })?;

    let inputs = DetectorInputs {
        vocab: lm.vocab(),
        tagger: &tagger,
        table: &table,
        key: WatermarkKey(args.key),
        gamma: args.gamma,
        k: args.k,
    };

    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create_output(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let reader = BufReader::new(open_input(&args.input)?);
    let mut index = 0usize;
    for line in reader.lines() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let verdict = detector.detect(&words, &inputs)?;
        let report = verdict.report.map(|r| if args.verbose { r } else { r.without_per_token() });
        let out_line = VerdictLine {
            schema_version: 1,
            index,
            mode: detector.name(),
            scored_t: verdict.scored_t,
            z: verdict.z,
            threshold: args.threshold,
            watermarked: decide(verdict.z, args.threshold),
            report,
        };
        writeln!(sink, "{}", serde_json::to_string(&out_line)?)?;
        index += 1;
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let manifest = ExperimentManifest::from_reader(open_input(&args.manifest)?)?;
    let output = run_experiment(&manifest, !args.serial)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let report_path = args.out_dir.join("report.json");
    let csv_path = args.out_dir.join("scores.csv");
    std::fs::write(&report_path, output.report_json()?)?;
    std::fs::write(&csv_path, &output.csv)?;

    for (name, metrics) in &output.report.detectors {
        println!(
            "{name}: TPR@5%FPR = {:.4}, best F1 = {:.4}",
            metrics.tpr_at_5_fpr, metrics.best_f1
        );
    }
    for attack in &output.report.attack {
        for (name, metrics) in &attack.detectors {
            println!(
                "attack rate {:.2} {name}: TPR@5%FPR = {:.4}, best F1 = {:.4}",
                attack.rate, metrics.tpr_at_5_fpr, metrics.best_f1
            );
        }
    }
    println!("report written to {}", report_path.display());
    println!("scores written to {}", csv_path.display());
    Ok(())
}

fn run_attack(args: AttackArgs) -> Result<()> {
    let map = parse_synonyms_tsv(BufReader::new(open_input(&args.synonyms)?))?;
    let config = AttackConfig::new(map, args.rate, args.seed)?;
    let reader = BufReader::new(open_input(&args.input)?);
    let mut out = create_output(&args.out)?;
    for line in reader.lines() {
        let line = line?;
        let words: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if words.is_empty() {
            writeln!(out)?;
            continue;
        }
        writeln!(out, "{}", synonym_attack(&words, &config).join(" "))?;
    }
    Ok(())
}
