//! Layered run configuration: an optional TOML file supplies per-stage
//! defaults, command-line flags override individual fields, and anything left
//! unset falls back to the library defaults. Unknown keys are rejected so
//! typos fail loudly instead of silently using a default.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// One seed for every stochastic stage (LDA, fold-in, GBDT provenance, synth).
    pub seed: Option<u64>,
    pub paths: PathsSection,
    pub ingest: IngestSection,
    pub sessionize: SessionizeSection,
    pub lda: LdaSection,
    pub features: FeaturesSection,
    pub label: LabelSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub curve: CurveSection,
    pub synth: SynthSection,
}

/// Input and output locations for `pipeline`; stage subcommands take paths on
/// the command line instead.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub log: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// "combined" or "combined-app".
    pub dialect: Option<String>,
    /// Resource classification rules file; built-in rules when unset.
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionizeSection {
    pub timeout_secs: Option<i64>,
    pub min_requests: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaSection {
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: Option<usize>,
    pub top_m: Option<usize>,
    pub min_token_len: Option<usize>,
    pub min_doc_freq: Option<usize>,
    /// Gibbs sweeps for fold-in inference of held-out documents.
    pub infer_sweeps: Option<usize>,
    /// Stop-word list file, one word per line; built-in English list when unset.
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub repeat_includes_query: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub ua_classes: Option<PathBuf>,
    pub robot_lists: Option<Vec<PathBuf>>,
    pub robot_exclusions: Option<PathBuf>,
    pub manual_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_frac: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// "gbdt" or "logreg".
    pub algorithm: Option<String>,
    /// "simple", "semantic", or "both".
    pub feature_set: Option<String>,
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub learning_rate: Option<f64>,
    pub min_leaf: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub fractions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub docs: Option<usize>,
    pub vocab: Option<usize>,
    pub clusters: Option<usize>,
    pub doc_length: Option<usize>,
    pub human_sessions: Option<usize>,
    pub bot_sessions: Option<usize>,
    pub stickiness: Option<f64>,
    pub bot_uniformity: Option<f64>,
    pub login_fraction: Option<f64>,
    pub mask_bots: Option<bool>,
    pub human_session_min: Option<usize>,
    pub human_session_max: Option<usize>,
    pub bot_session_min: Option<usize>,
    pub bot_session_max: Option<usize>,
    pub human_gap_median_secs: Option<f64>,
    pub human_gap_sigma: Option<f64>,
    pub bot_gap_secs: Option<f64>,
    pub bot_gap_jitter: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config file {}", path.display()))
    }
}

/// Command-line flag beats config file beats built-in default.
pub fn pick<T>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

/// Like [`pick`] without a final fallback.
pub fn pick_opt<T>(flag: Option<T>, cfg: Option<T>) -> Option<T> {
    flag.or(cfg)
}
