//! Runtime-selectable strategy registry.
//!
//! Insertion bias policies and detectors come in interchangeable variants
//! behind common traits, registered under the names the CLI exposes
//! (`kgw`/`stela` for insertion, `uniform`/`weighted` for detection).

use crate::detector::{z_uniform_words, z_weighted, DetectionReport, DetectorInputs};
use crate::error::Result;
use crate::watermark::{adaptive_delta, Mode};

/// Per-step watermark strength policy.
pub trait BiasPolicy: Send + Sync {
    /// Registry name, as accepted by the CLI.
    fn name(&self) -> &'static str;

    /// Effective bias for one generation step given the configured base
    /// strength and the current context's indeterminacy.
    fn step_delta(&self, delta_base: f64, lambda: f64) -> Result<f64>;
}

/// Fixed strength at every step; the indeterminacy signal is ignored.
pub struct StaticBias;

impl BiasPolicy for StaticBias {
    fn name(&self) -> &'static str {
        "kgw"
    }

    fn step_delta(&self, delta_base: f64, _lambda: f64) -> Result<f64> {
        Ok(delta_base)
    }
}

/// Strength scaled by the POS context's indeterminacy: strong where many
/// word classes are plausible, vanishing where the context is forced.
pub struct IndeterminacyScaledBias;

impl BiasPolicy for IndeterminacyScaledBias {
    fn name(&self) -> &'static str {
        "stela"
    }

    fn step_delta(&self, delta_base: f64, lambda: f64) -> Result<f64> {
        adaptive_delta(delta_base, lambda)
    }
}

static BIAS_POLICIES: [&dyn BiasPolicy; 2] = [&StaticBias, &IndeterminacyScaledBias];

pub fn bias_policy(name: &str) -> Option<&'static dyn BiasPolicy> {
    BIAS_POLICIES.iter().copied().find(|p| p.name() == name)
}

pub fn bias_policy_for(mode: Mode) -> &'static dyn BiasPolicy {
    match mode {
        Mode::StaticKgw => &StaticBias,
        Mode::AdaptiveStela => &IndeterminacyScaledBias,
    }
}

pub fn bias_policy_names() -> Vec<&'static str> {
    BIAS_POLICIES.iter().map(|p| p.name()).collect()
}

/// Outcome of running one detector on one text.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub z: f64,
    pub scored_t: usize,
    /// Full report when the detector produces one (weighted mode).
    pub report: Option<DetectionReport>,
}

/// A watermark detector over surface-word texts.
pub trait Detector: Send + Sync {
    /// Registry name, as accepted by the CLI.
    fn name(&self) -> &'static str;

    fn detect(&self, words: &[&str], inputs: &DetectorInputs<'_>) -> Result<Verdict>;
}

/// Plain green-token counting (every position weighs 1). Needs neither the
/// table nor the tagger.
pub struct UniformDetector;

impl Detector for UniformDetector {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn detect(&self, words: &[&str], inputs: &DetectorInputs<'_>) -> Result<Verdict> {
        let (z, scored_t) =
            z_uniform_words(words, inputs.vocab, inputs.key, inputs.gamma, inputs.k)?;
        Ok(Verdict { z, scored_t, report: None })
    }
}

/// Indeterminacy-weighted scoring with per-token and per-category breakdown.
pub struct WeightedDetector;

impl Detector for WeightedDetector {
    fn name(&self) -> &'static str {
        "weighted"
    }

    fn detect(&self, words: &[&str], inputs: &DetectorInputs<'_>) -> Result<Verdict> {
        let report = z_weighted(words, inputs)?;
        Ok(Verdict { z: report.z_weighted, scored_t: report.scored_t, report: Some(report) })
    }
}

static DETECTORS: [&dyn Detector; 2] = [&UniformDetector, &WeightedDetector];

pub fn detector(name: &str) -> Option<&'static dyn Detector> {
    DETECTORS.iter().copied().find(|d| d.name() == name)
}

pub fn detector_names() -> Vec<&'static str> {
    DETECTORS.iter().map(|d| d.name()).collect()
}
