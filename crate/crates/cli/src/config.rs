//! Versioned experiment configuration.

use std::path::{Path, PathBuf};

use lincon_core::concept_model::{ConceptGraph, GraphKind};
use lincon_core::data::Mask;
use lincon_core::embedding::{AdamParams, DatasetMode, Optimizer, TrainConfig};
use lincon_core::geometry::CrossMode;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

fn default_replicates() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKindCfg {
    Dag,
    Mrf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub m: usize,
    #[serde(default = "default_kind")]
    pub kind: GraphKindCfg,
    /// Defaults to `m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_parents: Option<usize>,
    #[serde(default = "default_cpt_lo")]
    pub cpt_lo: f64,
    #[serde(default = "default_cpt_hi")]
    pub cpt_hi: f64,
    /// Fixed edge list; a random DAG is drawn when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

fn default_kind() -> GraphKindCfg {
    GraphKindCfg::Dag
}
fn default_cpt_lo() -> f64 {
    0.3
}
fn default_cpt_hi() -> f64 {
    0.7
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabModeCfg {
    Full,
    MaxMasks,
    KeepFraction,
    Masks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetCfg {
    Streaming,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_vocab")]
    pub vocab: VocabModeCfg,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_masks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_fraction: Option<f64>,
    /// Keep patterns such as `"110"` for `vocab = "masks"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<String>>,
    #[serde(default = "default_observe_prob")]
    pub observe_prob: f64,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetCfg,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_size: Option<usize>,
}

fn default_vocab() -> VocabModeCfg {
    VocabModeCfg::Full
}
fn default_observe_prob() -> f64 {
    0.5
}
fn default_dataset() -> DatasetCfg {
    DatasetCfg::Streaming
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerCfg {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerCfg,
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub max_steps: usize,
    /// Plateau window in log entries; 0 disables early stopping.
    #[serde(default = "default_stop_window")]
    pub stop_window: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Defaults to `m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

fn default_optimizer() -> OptimizerCfg {
    OptimizerCfg::Sgd
}
fn default_batch() -> usize {
    100
}
fn default_stop_window() -> usize {
    50
}
fn default_stop_tol() -> f64 {
    1e-4
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_log_every() -> usize {
    100
}
fn default_beta1() -> f64 {
    AdamParams::default().beta1
}
fn default_beta2() -> f64 {
    AdamParams::default().beta2
}
fn default_adam_eps() -> f64 {
    AdamParams::default().eps
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossModeCfg {
    Signed,
    Absolute,
    MeanVectors,
}

impl From<CrossModeCfg> for CrossMode {
    fn from(c: CrossModeCfg) -> Self {
        match c {
            CrossModeCfg::Signed => CrossMode::Signed,
            CrossModeCfg::Absolute => CrossMode::Absolute,
            CrossModeCfg::MeanVectors => CrossMode::MeanVectors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "default_cross")]
    pub cross_mode: CrossModeCfg,
    /// Cosine probes in the trace every this many steps (a multiple of
    /// `train.log_every`); 0 disables probes.
    #[serde(default)]
    pub probe_every: usize,
    #[serde(default)]
    pub heatmap: bool,
    #[serde(default)]
    pub clusters: bool,
    #[serde(default)]
    pub ranks: bool,
    /// Max |p̂(c|d) − p(c|d)| over the vocabulary.
    #[serde(default)]
    pub conditional_fit: bool,
    #[serde(default)]
    pub checkpoint: bool,
}

fn default_cross() -> CrossModeCfg {
    CrossModeCfg::Signed
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            cross_mode: default_cross(),
            probe_every: 0,
            heatmap: false,
            clusters: false,
            ranks: false,
            conditional_fit: false,
            checkpoint: false,
        }
    }
}

/// Resolved vocabulary recipe.
#[derive(Clone, Debug, PartialEq)]
pub enum VocabPlan {
    Full,
    MaxMasks(usize),
    KeepFraction(f64),
    Masks(Vec<Mask>),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Canonical serialization; the manifest hashes this text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.train.dim.unwrap_or(self.model.m)
    }

    pub fn max_parents(&self) -> usize {
        self.model.max_parents.unwrap_or(self.model.m)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        let m = self.model.m;
        if m == 0 || m > 20 {
            return Err(invalid(format!("model.m = {m} must lie in 1..=20")));
        }
        if self.model.kind == GraphKindCfg::Mrf {
            return Err(invalid(
                "model.kind = \"mrf\" has no sampling semantics; generate with \"dag\"",
            ));
        }
        let (lo, hi) = (self.model.cpt_lo, self.model.cpt_hi);
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(invalid(format!("cpt range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1")));
        }
        self.graph_edges()?;
        self.vocab_plan()?;
        if !(self.data.observe_prob > 0.0 && self.data.observe_prob <= 1.0) {
            return Err(invalid("data.observe_prob must lie in (0, 1]"));
        }
        if self.data.dataset == DatasetCfg::Fixed && self.data.dataset_size.unwrap_or(0) == 0 {
            return Err(invalid("data.dataset = \"fixed\" needs a positive data.dataset_size"));
        }
        if self.dim() == 0 {
            return Err(invalid("train.dim must be at least 1"));
        }
        if self.metrics.probe_every > 0 && self.metrics.probe_every % self.train.log_every.max(1) != 0 {
            return Err(invalid("metrics.probe_every must be a multiple of train.log_every"));
        }
        self.train_config(0)
            .validate()
            .map_err(|e| invalid(format!("train: {e}")))?;
        Ok(())
    }

    /// Fixed edges, validated as a DAG over `m` nodes.
    pub fn graph_edges(&self) -> Result<Option<ConceptGraph>, ConfigError> {
        match &self.model.edges {
            None => Ok(None),
            Some(edges) => {
                let pairs = edges.iter().map(|e| (e[0], e[1])).collect();
                ConceptGraph::new(self.model.m, GraphKind::Dag, pairs)
                    .map(Some)
                    .map_err(|e| invalid(format!("model.edges: {e}")))
            }
        }
    }

    pub fn vocab_plan(&self) -> Result<VocabPlan, ConfigError> {
        let m = self.model.m;
        let d = &self.data;
        match d.vocab {
            VocabModeCfg::Full => Ok(VocabPlan::Full),
            VocabModeCfg::MaxMasks => match d.max_masks {
                Some(n) if n > 0 => Ok(VocabPlan::MaxMasks(n)),
                _ => Err(invalid("vocab = \"max_masks\" needs a positive data.max_masks")),
            },
            VocabModeCfg::KeepFraction => match d.keep_fraction {
                Some(f) if f > 0.0 && f <= 1.0 => Ok(VocabPlan::KeepFraction(f)),
                _ => Err(invalid("vocab = \"keep_fraction\" needs data.keep_fraction in (0, 1]")),
            },
            VocabModeCfg::Masks => {
                let patterns = d
                    .masks
                    .as_ref()
                    .filter(|p| !p.is_empty())
                    .ok_or_else(|| invalid("vocab = \"masks\" needs a non-empty data.masks list"))?;
                patterns
                    .iter()
                    .map(|p| parse_mask(p, m))
                    .collect::<Result<Vec<_>, _>>()
                    .map(VocabPlan::Masks)
            }
        }
    }

    /// Training settings for one replicate.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            optimizer: match t.optimizer {
                OptimizerCfg::Sgd => Optimizer::Sgd,
                OptimizerCfg::Adam => Optimizer::Adam(AdamParams {
                    beta1: t.adam_beta1,
                    beta2: t.adam_beta2,
                    eps: t.adam_eps,
                }),
            },
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            stop_window: t.stop_window,
            stop_tol: t.stop_tol,
            init_scale: t.init_scale,
            seed,
            log_every: t.log_every,
            observe_prob: self.data.observe_prob,
            dataset: match self.data.dataset {
                DatasetCfg::Streaming => DatasetMode::Streaming,
                DatasetCfg::Fixed => DatasetMode::Fixed {
                    size: self.data.dataset_size.unwrap_or(0),
                },
            },
        }
    }
}

/// Parses a keep pattern such as `"110"` (coordinate 0 first).
pub fn parse_mask(pattern: &str, m: usize) -> Result<Mask, ConfigError> {
    let bits: Vec<u8> = pattern
        .chars()
        .map(|ch| match ch {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(invalid(format!("mask {pattern:?}: unexpected character {other:?}"))),
        })
        .collect::<Result<_, _>>()?;
    if bits.len() != m {
        return Err(invalid(format!("mask {pattern:?} has length {}, expected {m}", bits.len())));
    }
    Mask::new(&bits).map_err(|e| invalid(format!("mask {pattern:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[model]
m = 3
[data]
[train]
learning_rate = 0.1
max_steps = 10
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.replicates, 1);
        assert_eq!(cfg.dim(), 3);
        assert_eq!(cfg.max_parents(), 3);
        assert_eq!(cfg.train.batch_size, 100);
        assert_eq!(cfg.data.observe_prob, 0.5);
        assert_eq!(cfg.vocab_plan().unwrap(), VocabPlan::Full);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_inconsistent_settings() {
        let bad = MINIMAL.replace("[data]", "[data]\nvocab = \"max_masks\"");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(ConfigError::Invalid(_))));
        let bad = MINIMAL.replace("schema_version = 1", "schema_version = 9");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("m = 3", "m = 3\nedges = [[0, 1], [1, 0]]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("[data]", "[data]\nvocab = \"masks\"\nmasks = [\"10\"]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("max_steps = 10", "max_steps = 10\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn mask_patterns_parse() {
        let mask = parse_mask("110", 3).unwrap();
        assert_eq!(mask.observed_count(), 2);
        assert!(parse_mask("1x0", 3).is_err());
    }
}
