//! End-to-end library flow: generation, detection, and their mirror
//! properties on the synthetic fixture.

mod common;

use common::fixture;
use posmark::detector::{z_weighted, DetectorInputs};
use posmark::error::Error;
use posmark::greenlist::WatermarkKey;
use posmark::indeterminacy::IndeterminacyTable;
use posmark::toylm::BOS;
use posmark::watermark::{generate, MaskedLm, Mode, WatermarkConfig};

fn config(mode: Mode, delta_base: f64, key: u64) -> WatermarkConfig {
    WatermarkConfig {
        gamma: 0.5,
        delta_base,
        k: 2,
        mode,
        key: WatermarkKey(key),
        temperature: 0.7,
    }
}

#[test]
fn generation_is_deterministic_and_aligned() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let cfg = config(Mode::AdaptiveStela, 2.5, 7);
    let prompt = f.prompt(2);
    let a = generate(&masked, &f.tagger, &f.table, &cfg, &prompt, 120, 11).unwrap();
    let b = generate(&masked, &f.tagger, &f.table, &cfg, &prompt, 120, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.tokens.len(), 120);
    assert_eq!(a.steps.len(), a.tokens.len());
    // Boundary markers are masked out of the output.
    let bos = f.lm.vocab().id(BOS).unwrap();
    assert!(a.tokens.iter().all(|&t| t != bos && t != 1));

    let c = generate(&masked, &f.tagger, &f.table, &cfg, &prompt, 120, 12).unwrap();
    assert_ne!(a.tokens, c.tokens);
}

#[test]
fn insertion_diagnostics_mirror_detection_scores() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let cfg = config(Mode::AdaptiveStela, WatermarkConfig::calibrated_delta(&f.table).unwrap(), 99);
    let record = generate(&masked, &f.tagger, &f.table, &cfg, &f.prompt(2), 200, 3).unwrap();

    let words = record.surfaces(f.lm.vocab());
    let inputs = f.detector_inputs(cfg.key, cfg.gamma, cfg.k);
    let report = z_weighted(&words, &inputs).unwrap();

    // Detector scores positions k..T of the text; those positions' green
    // flags and weights must equal what insertion recorded.
    assert_eq!(report.per_token.len(), record.steps.len() - 1);
    for (scored, step) in report.per_token.iter().zip(record.steps.iter().skip(1)) {
        assert_eq!(scored.green, step.green, "position {}", scored.position);
        assert_eq!(scored.weight, step.lambda, "position {}", scored.position);
    }
}

#[test]
fn watermarked_texts_are_detected_and_nulls_are_not() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let delta = WatermarkConfig::calibrated_delta(&f.table).unwrap();
    let cfg = config(Mode::AdaptiveStela, delta, 5551);
    let null_cfg = config(Mode::AdaptiveStela, 0.0, 5551);
    let inputs = f.detector_inputs(cfg.key, cfg.gamma, cfg.k);

    for i in 0..20 {
        let wm = generate(&masked, &f.tagger, &f.table, &cfg, &f.prompt(2), 200, 900 + i).unwrap();
        let z = z_weighted(&wm.surfaces(f.lm.vocab()), &inputs).unwrap().z_weighted;
        assert!(z > 4.0, "watermarked text {i} scored z' = {z}");

        let null =
            generate(&masked, &f.tagger, &f.table, &null_cfg, &f.prompt(2), 200, 900 + i).unwrap();
        let z = z_weighted(&null.surfaces(f.lm.vocab()), &inputs).unwrap().z_weighted;
        assert!(z < 4.0, "null text {i} scored z' = {z}");
    }
}

#[test]
fn adaptive_with_all_one_table_matches_static_step_by_step() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let ones = IndeterminacyTable::constant(2, &f.tagset, 1.0).unwrap();
    let delta = 2.2;
    let adaptive = generate(
        &masked,
        &f.tagger,
        &ones,
        &config(Mode::AdaptiveStela, delta, 42),
        &f.prompt(2),
        150,
        77,
    )
    .unwrap();
    let static_ = generate(
        &masked,
        &f.tagger,
        &ones,
        &config(Mode::StaticKgw, delta, 42),
        &f.prompt(2),
        150,
        77,
    )
    .unwrap();
    assert_eq!(adaptive.tokens, static_.tokens);
    for (a, s) in adaptive.steps.iter().zip(&static_.steps) {
        assert_eq!(a.delta, s.delta);
        assert_eq!(a.green, s.green);
    }
}

#[test]
fn zero_delta_generation_ignores_the_key() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let a = generate(
        &masked,
        &f.tagger,
        &f.table,
        &config(Mode::StaticKgw, 0.0, 1),
        &f.prompt(2),
        100,
        13,
    )
    .unwrap();
    let b = generate(
        &masked,
        &f.tagger,
        &f.table,
        &config(Mode::AdaptiveStela, 0.0, 999_999),
        &f.prompt(2),
        100,
        13,
    )
    .unwrap();
    assert_eq!(a.tokens, b.tokens);
}

#[test]
fn mean_green_fraction_rises_well_above_half_under_calibrated_bias() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let delta = WatermarkConfig::calibrated_delta(&f.table).unwrap();
    let cfg = config(Mode::AdaptiveStela, delta, 31);
    let mut total = 0.0;
    let runs = 100;
    for i in 0..runs {
        let record =
            generate(&masked, &f.tagger, &f.table, &cfg, &f.prompt(2), 200, 5000 + i).unwrap();
        total += record.green_fraction();
    }
    let mean = total / runs as f64;
    assert!(mean > 0.65, "mean green fraction {mean}");
}

#[test]
fn heavy_watermarking_costs_fluency() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let plain_cfg = config(Mode::StaticKgw, 0.0, 77);
    let heavy_cfg = config(Mode::StaticKgw, 10.0, 77);
    let mut plain_nll = 0.0;
    let mut heavy_nll = 0.0;
    let runs = 100;
    for i in 0..runs {
        let plain =
            generate(&masked, &f.tagger, &f.table, &plain_cfg, &f.prompt(2), 120, 7000 + i)
                .unwrap();
        let heavy =
            generate(&masked, &f.tagger, &f.table, &heavy_cfg, &f.prompt(2), 120, 7000 + i)
                .unwrap();
        plain_nll += f.lm.nll(&plain.tokens).unwrap();
        heavy_nll += f.lm.nll(&heavy.tokens).unwrap();
    }
    assert!(
        plain_nll / runs as f64 <= heavy_nll / runs as f64,
        "unwatermarked nll {plain_nll} vs delta-10 nll {heavy_nll}"
    );
}

#[test]
fn prompt_and_tagset_preconditions_are_enforced() {
    let f = fixture();
    let masked = MaskedLm::new(&f.lm, f.lm.boundary_ids());
    let cfg = WatermarkConfig { k: 4, ..config(Mode::AdaptiveStela, 1.0, 0) };
    // k = 4 needs a 3-token prompt.
    let err = generate(&masked, &f.tagger, &f.table, &cfg, &f.prompt(2), 10, 0).unwrap_err();
    assert!(matches!(err, Error::Config(_)));

    let foreign = IndeterminacyTable::constant(
        2,
        &posmark::corpus::Tagset::new("ptb", &[("NN", posmark::corpus::WordCategory::Content)])
            .unwrap(),
        0.5,
    )
    .unwrap();
    let err = generate(
        &masked,
        &f.tagger,
        &foreign,
        &config(Mode::AdaptiveStela, 1.0, 0),
        &f.prompt(2),
        10,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));

    let inputs = DetectorInputs { table: &foreign, ..f.detector_inputs(WatermarkKey(0), 0.5, 2) };
    assert!(matches!(z_weighted(&["det00", "noun00"], &inputs), Err(Error::Config(_))));
}

#[test]
fn zero_delta_experiment_carries_no_signal() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = f.manifest(dir.path(), 80, 80, &[], 31_337);
    manifest.delta_base = posmark::eval::DeltaSpec::Fixed(0.0);
    let output = posmark::eval::run_experiment(&manifest, true).unwrap();
    for (name, metrics) in &output.report.detectors {
        // Positives are distributed like the nulls; TPR at 5% FPR sits near
        // the false-positive rate itself.
        assert!(
            metrics.tpr_at_5_fpr < 0.2,
            "{name} TPR {} without any watermark",
            metrics.tpr_at_5_fpr
        );
        assert!(metrics.mean_z_watermarked.abs() < 0.5, "{name} drifted");
    }
}

#[test]
fn estimated_lambdas_track_the_chain_rows() {
    let f = fixture();
    // ADJ is always followed by NOUN: zero indeterminacy.
    let adj = f.tagset.tag("ADJ").unwrap();
    assert_eq!(f.table.lookup(&[adj]), 0.0);
    // DET splits evenly between ADJ and NOUN: close to 1.
    let det = f.tagset.tag("DET").unwrap();
    assert!(f.table.lookup(&[det]) > 0.99);
    // ADP row (0.7, 0.3): analytic normalized entropy.
    let adp = f.tagset.tag("ADP").unwrap();
    let analytic = common::analytic_lambda2(0.7);
    let estimated = f.table.lookup(&[adp]);
    assert!((estimated - analytic).abs() < 0.02, "estimated {estimated} analytic {analytic}");
}
