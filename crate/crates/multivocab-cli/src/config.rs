//! Pipeline configuration: a single JSON document with per-stage defaults.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use multivocab::{FingerprintMode, TrainerConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub code: String,
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub languages: Vec<LanguageSpec>,
    #[serde(default = "d_vocab_size")]
    pub per_language_vocab_size: u32,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    pub total_lines: u64,
    #[serde(default = "d_capacity")]
    pub capacity: u64,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_chunk")]
    pub chunk: u64,
    #[serde(default = "d_floor")]
    pub floor: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_restarts")]
    pub kmeans_restarts: u64,
    #[serde(default = "d_max_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "d_fingerprint_mode")]
    pub fingerprint_mode: String,
    /// Trained sizes for the ALP ladders; derived from floor and capacity
    /// when empty.
    #[serde(default)]
    pub ladder_sizes: Vec<u32>,
    /// Lines per cluster training corpus; defaults to the largest cluster's
    /// summed member line count.
    #[serde(default)]
    pub cluster_lines: Option<u64>,
    /// Reserved control tokens pinned after unk and the meta symbol in the
    /// merged vocabulary.
    #[serde(default)]
    pub reserved_tokens: Vec<String>,
    #[serde(default)]
    pub trainer: TrainerSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

fn d_vocab_size() -> u32 {
    30_000
}
fn d_temperature() -> f64 {
    2.0
}
fn d_capacity() -> u64 {
    1_000_000
}
fn d_k() -> usize {
    8
}
fn d_chunk() -> u64 {
    1_000
}
fn d_floor() -> u64 {
    2_000
}
fn d_restarts() -> u64 {
    4
}
fn d_max_iters() -> usize {
    100
}
fn d_fingerprint_mode() -> String {
    "neglogprob".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSettings {
    pub max_token_len: usize,
    pub min_count: u64,
    pub max_seed_size: usize,
    pub em_steps_per_round: usize,
    pub keep_fraction: f64,
    pub character_coverage: f64,
    pub max_rounds: usize,
    pub final_em_steps: usize,
    pub unk_token: String,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        let d = TrainerConfig::default();
        TrainerSettings {
            max_token_len: d.max_token_len,
            min_count: d.min_count,
            max_seed_size: d.max_seed_size,
            em_steps_per_round: d.em_steps_per_round,
            keep_fraction: d.keep_fraction,
            character_coverage: d.character_coverage,
            max_rounds: d.max_rounds,
            final_em_steps: d.final_em_steps,
            unk_token: d.unk_token,
        }
    }
}

impl TrainerSettings {
    pub fn to_trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            max_token_len: self.max_token_len,
            min_count: self.min_count,
            max_seed_size: self.max_seed_size,
            em_steps_per_round: self.em_steps_per_round,
            keep_fraction: self.keep_fraction,
            character_coverage: self.character_coverage,
            max_rounds: self.max_rounds,
            final_em_steps: self.final_em_steps,
            unk_token: self.unk_token.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    pub coverage_points: Vec<f64>,
    pub baseline_vocab: Option<PathBuf>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            coverage_points: vec![0.5, 0.9, 0.95, 0.99],
            baseline_vocab: None,
        }
    }
}

impl PipelineConfig {
    /// Loads, applies the seed override, fills derived defaults, and
    /// validates. Paths in the config are resolved relative to the config
    /// file's directory.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for spec in &mut config.languages {
            if spec.corpus.is_relative() {
                spec.corpus = base.join(&spec.corpus);
            }
        }
        if let Some(p) = &mut config.analysis.baseline_vocab {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if config.ladder_sizes.is_empty() {
            config.ladder_sizes = derive_ladder_sizes(
                config.floor,
                config.capacity,
                config.languages.len() as u64,
            );
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.languages.is_empty() {
            return fail("at least one language is required".into());
        }
        let mut seen = BTreeSet::new();
        for spec in &self.languages {
            if spec.code.is_empty()
                || !spec
                    .code
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return fail(format!("invalid language code {:?}", spec.code));
            }
            if !seen.insert(&spec.code) {
                return fail(format!("duplicate language code {:?}", spec.code));
            }
            if !spec.corpus.is_file() {
                return fail(format!(
                    "corpus for {} not found: {}",
                    spec.code,
                    spec.corpus.display()
                ));
            }
        }
        let n = self.languages.len() as u64;
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.total_lines == 0 {
            return fail("total_lines must be positive".into());
        }
        if self.chunk == 0 {
            return fail("chunk must be positive".into());
        }
        if self.capacity < self.floor * n {
            return fail(format!(
                "capacity {} cannot satisfy {} languages at floor {}",
                self.capacity, n, self.floor
            ));
        }
        if self.k == 0 || self.k > self.languages.len() {
            return fail(format!(
                "k must lie in 1..={}, got {}",
                self.languages.len(),
                self.k
            ));
        }
        if self.kmeans_restarts == 0 {
            return fail("kmeans_restarts must be positive".into());
        }
        if self.ladder_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return fail("ladder_sizes must be strictly increasing".into());
        }
        if self.ladder_sizes[0] as u64 > self.floor {
            return fail(format!(
                "the first ladder size ({}) must not exceed the floor ({})",
                self.ladder_sizes[0], self.floor
            ));
        }
        self.fingerprint_mode
            .parse::<FingerprintMode>()
            .map_err(CliError::Config)?;
        if !(self.trainer.keep_fraction > 0.0 && self.trainer.keep_fraction < 1.0) {
            return fail(format!(
                "trainer.keep_fraction must lie in (0, 1), got {}",
                self.trainer.keep_fraction
            ));
        }
        for p in &self.analysis.coverage_points {
            if !(*p > 0.0 && *p <= 1.0) {
                return fail(format!("coverage point {p} must lie in (0, 1]"));
            }
        }
        if let Some(p) = &self.analysis.baseline_vocab {
            if !p.is_file() {
                return fail(format!("baseline vocab not found: {}", p.display()));
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> FingerprintMode {
        self.fingerprint_mode.parse().expect("validated")
    }

    /// Hash of the resolved configuration, recorded with every manifest
    /// entry so stale artifacts are detected after config edits.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("serializable");
        crate::manifest::sha256_hex(canonical.as_bytes())
    }
}

/// Doubles from the floor until the largest possible single-language budget
/// (capacity minus the other languages' floors) is covered.
fn derive_ladder_sizes(floor: u64, capacity: u64, n: u64) -> Vec<u32> {
    let start = floor.max(2);
    let max_budget = capacity.saturating_sub(floor * n.saturating_sub(1));
    let mut sizes = vec![start as u32];
    let mut size = start;
    while size < max_budget {
        size = (size * 2).min(max_budget);
        sizes.push(size as u32);
    }
    sizes
}
