//! Experiment configuration: one TOML file drives every subcommand.
//!
//! The file carries a single master `seed`; per-stage seeds (synthesis,
//! splitting, cross-validation folds, Monte Carlo, permutations) are derived
//! from it with a SplitMix64 step so that stages stay decorrelated and a
//! `--seed` override moves the whole experiment at once. Seed fields inside
//! embedded sections are overwritten during resolution; setting them in the
//! file has no effect.
//!
//! The configuration hash covers exactly the fields that shape a trained
//! model: the master seed, the method, and the segment, split, gridcell, and
//! surface sections. Report-only settings (evaluation windows, interval
//! settings) are excluded so reports can be regenerated under the models
//! they describe. Every artifact embeds the hash and consumers refuse to mix
//! artifacts whose hashes differ.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gaitprint::cma::McSettings;
use gaitprint::funreg::FunregConfig;
use gaitprint::ingest::{IngestSchema, SegmentOptions, SplitMode, SplitSpec};
use gaitprint::pipeline::GridcellConfig;
use gaitprint::synth::SynthConfig;
use gaitprint::{Error, Result};

/// Stage tags for deriving per-stage seeds from the master seed.
pub const STAGE_SYNTH: u64 = 1;
pub const STAGE_SPLIT: u64 = 2;
pub const STAGE_FOLDS: u64 = 3;
pub const STAGE_MC: u64 = 4;
pub const STAGE_PERMUTATION: u64 = 5;

/// SplitMix64 finalizer over `master + stage * golden_gamma`. Distinct stage
/// tags give decorrelated seeds even when masters are small consecutive
/// integers. The top bit is cleared so resolved configurations stay
/// representable as TOML integers.
pub fn stage_seed(master: u64, stage: u64) -> u64 {
    let mut z = master.wrapping_add(stage.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) & 0x7fff_ffff_ffff_ffff
}

/// Classifier family to train and score with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Logistic regression on screened lag-map grid-cell counts.
    Gridcell,
    /// Penalized logistic regression on tensor-product B-spline surfaces.
    Surface,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gridcell => "gridcell",
            Method::Surface => "surface",
        }
    }
}

/// Train/test split policy. Mirrors the library split modes with flat fields
/// so unknown keys in the file are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitModeName,
    /// Fraction of each subject's frames used for training under
    /// `within_session`; ignored under `cross_session`.
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitModeName {
    WithinSession,
    CrossSession,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            mode: SplitModeName::WithinSession,
            train_fraction: 0.75,
        }
    }
}

impl SplitSection {
    pub fn to_spec(&self, seed: u64) -> Result<SplitSpec> {
        let mode = match self.mode {
            SplitModeName::WithinSession => {
                if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "train_fraction must lie strictly between 0 and 1, got {}",
                        self.train_fraction
                    )));
                }
                SplitMode::WithinSession {
                    train_fraction: self.train_fraction,
                }
            }
            SplitModeName::CrossSession => SplitMode::CrossSession,
        };
        Ok(SplitSpec { mode, seed })
    }
}

/// Report settings for `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Window lengths, in seconds, for the accuracy-versus-data curve.
    pub windows: Vec<u32>,
    /// Label permutations for the chance baseline; 0 skips it.
    pub permutations: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            windows: vec![1, 2, 5, 10, 25, 50, 100],
            permutations: 0,
        }
    }
}

/// Settings for `cma` interval estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaSection {
    pub alpha: f64,
    /// Monte Carlo draws for the equicoordinate quantile.
    pub n_mc: usize,
}

impl Default for CmaSection {
    fn default() -> Self {
        CmaSection {
            alpha: 0.05,
            n_mc: 2_000_000,
        }
    }
}

impl CmaSection {
    pub fn to_settings(&self, seed: u64) -> McSettings {
        McSettings {
            n_mc: self.n_mc,
            seed,
        }
    }
}

/// Everything a run needs, with defaults for every field so a minimal file
/// (or none at all) is a valid experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    pub synth: SynthConfig,
    pub ingest: IngestSchema,
    pub segment: SegmentOptions,
    pub split: SplitSection,
    pub gridcell: GridcellConfig,
    pub surface: FunregConfig,
    pub evaluate: EvaluateSection,
    pub cma: CmaSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            method: Method::Gridcell,
            synth: SynthConfig::default(),
            ingest: IngestSchema::default(),
            segment: SegmentOptions::default(),
            split: SplitSection::default(),
            gridcell: GridcellConfig::default(),
            surface: FunregConfig::default(),
            evaluate: EvaluateSection::default(),
            cma: CmaSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Pushes derived stage seeds into embedded sections and validates the
    /// fields the library does not check until use.
    pub fn resolve(&mut self) -> Result<()> {
        self.synth.seed = stage_seed(self.seed, STAGE_SYNTH);
        self.surface.seed = stage_seed(self.seed, STAGE_FOLDS);
        self.synth.validate()?;
        self.surface.validate()?;
        self.split.to_spec(0)?;
        if !(self.cma.alpha > 0.0 && self.cma.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.cma.alpha
            )));
        }
        if self.evaluate.windows.is_empty() || self.evaluate.windows.contains(&0) {
            return Err(Error::Config(
                "evaluation windows must be non-empty and positive".to_string(),
            ));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        self.split.to_spec(stage_seed(self.seed, STAGE_SPLIT))
    }

    pub fn mc_settings(&self) -> McSettings {
        self.cma.to_settings(stage_seed(self.seed, STAGE_MC))
    }
}

/// View of the model-shaping fields, serialized canonically for hashing.
#[derive(Serialize)]
struct HashView<'a> {
    seed: u64,
    method: Method,
    segment: &'a SegmentOptions,
    split: &'a SplitSection,
    gridcell: &'a GridcellConfig,
    surface: &'a FunregConfig,
}

/// Hex SHA-256 of the resolved model-shaping configuration. JSON is the
/// hashing form because it represents the full u64 seed range.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let view = HashView {
        seed: cfg.seed,
        method: cfg.method,
        segment: &cfg.segment,
        split: &cfg.split,
        gridcell: &cfg.gridcell,
        surface: &cfg.surface,
    };
    let text = serde_json::to_string(&view)
        .map_err(|e| Error::Config(format!("configuration is not serializable: {e}")))?;
    let digest = Sha256::digest(text.as_bytes());
    let mut hash = String::with_capacity(64);
    for byte in digest {
        hash.push_str(&format!("{byte:02x}"));
    }
    Ok(hash)
}

/// Loads, overrides, resolves. A missing `--config` means all defaults.
pub fn load_config(
    path: Option<&Path>,
    seed_override: Option<u64>,
    method_override: Option<Method>,
) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(method) = method_override {
        cfg.method = method;
    }
    cfg.resolve()?;
    Ok(cfg)
}
