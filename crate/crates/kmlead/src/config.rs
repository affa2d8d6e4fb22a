//! Pipeline configuration (TOML or JSON) and seed plumbing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kmlead_core::similarity::{default_covariates, Aggregation, ProfileChoice};
use kmlead_core::synthesis::{McmcConfig, Priors};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEED_ENV: &str = "KMLEAD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub inputs: Inputs,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    pub synthesis: SynthesisConfig,
    /// Exactly two classes; projection reports the second minus the first.
    pub classes: Vec<ClassConfig>,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub xy: PathBuf,
    pub risk_table: PathBuf,
    pub baseline: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub covariates: Vec<String>,
    /// The first mode decides which trials share the target's cluster.
    pub modes: Vec<Aggregation>,
    /// `None` picks k by mean silhouette.
    pub k: Option<usize>,
    /// Profile choice for trials with several baseline rows; unlisted
    /// multi-arm trials are pooled.
    pub profiles: BTreeMap<String, ProfileChoice>,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            covariates: default_covariates(),
            modes: vec![Aggregation::Average, Aggregation::Maximum],
            k: None,
            profiles: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Trial whose cluster defines the eligible evidence.
    pub target: String,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub n_total: Option<f64>,
    /// Predictive draws per class.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub priors: Priors,
}

impl SynthesisConfig {
    pub fn mcmc(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            chains: self.chains,
            iters: self.iters,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
            force: self.force,
            n_total: self.n_total,
            priors: self.priors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub name: String,
    pub arms: Vec<ArmRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmRef {
    pub study: String,
    pub arm: String,
}

impl std::fmt::Display for ArmRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} / {}", self.study, self.arm)
    }
}

impl std::str::FromStr for ArmRef {
    type Err = String;

    /// `STUDY/ARM`, split at the first slash.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once('/') {
            Some((study, arm)) if !study.trim().is_empty() && !arm.trim().is_empty() => Ok(ArmRef {
                study: study.trim().to_string(),
                arm: arm.trim().to_string(),
            }),
            _ => Err(format!("expected STUDY/ARM, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    Index,
    /// Shuffle the second class's draws with a seed derived from the run seed.
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Clinically meaningful median-OS gain in months.
    pub margin: f64,
    pub times: Vec<f64>,
    pub pairing: PairingMode,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            margin: 3.0,
            times: vec![12.0, 24.0, 36.0, 48.0, 60.0],
            pairing: PairingMode::Index,
        }
    }
}

fn default_seed() -> u64 {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_chains() -> usize {
    4
}
fn default_iters() -> usize {
    20_000
}
fn default_burn_in() -> usize {
    10_000
}
fn default_thin() -> usize {
    5
}
fn default_draws() -> usize {
    4000
}

impl PipelineConfig {
    /// Parses by extension (`.json`, anything else as TOML) and resolves
    /// relative paths against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::parse(&text, is_json).map_err(|message| Error::Config {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.inputs.xy,
            &mut cfg.inputs.risk_table,
            &mut cfg.inputs.baseline,
            &mut cfg.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check().map_err(|message| Error::Config {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn parse(text: &str, json: bool) -> std::result::Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Structural checks that need no input files.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.classes.len() != 2 {
            return Err(format!("expected exactly 2 classes, found {}", self.classes.len()));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err("class names must be unique".into());
        }
        for c in &self.classes {
            let ok = !c.name.is_empty()
                && c.name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_');
            if !ok {
                return Err(format!("class name {:?} must be non-empty [A-Za-z0-9_-]", c.name));
            }
            if c.arms.is_empty() {
                return Err(format!("class {} lists no arms", c.name));
            }
        }
        if self.similarity.modes.is_empty() {
            return Err("similarity.modes is empty".into());
        }
        if self.similarity.covariates.is_empty() {
            return Err("similarity.covariates is empty".into());
        }
        if self.synthesis.draws < 2 {
            return Err("synthesis.draws must be at least 2".into());
        }
        if !self.projection.margin.is_finite() {
            return Err("projection.margin must be finite".into());
        }
        if self.projection.times.is_empty() || self.projection.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err("projection.times must be non-empty, finite and non-negative".into());
        }
        Ok(())
    }
}

/// `--seed` beats `KMLEAD_SEED`, which beats the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(v) => v
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(config),
    }
}

pub fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

/// Independent sub-seeds for every random stage, drawn in a fixed order from
/// the run seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds {
    pub clustering: u64,
    pub pairing: u64,
    /// `(mcmc, predictive)` per class.
    pub classes: Vec<(u64, u64)>,
}

impl Seeds {
    pub fn derive(master: u64, n_classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        let clustering = rng.next_u64();
        let pairing = rng.next_u64();
        let classes = (0..n_classes).map(|_| (rng.next_u64(), rng.next_u64())).collect();
        Self {
            clustering,
            pairing,
            classes,
        }
    }
}
