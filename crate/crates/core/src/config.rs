//! Pipeline configuration, read from and written to TOML.
//!
//! Every section has defaults, so an empty file is a valid configuration.
//! All randomness is drawn from the named seeds in `[seeds]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node2vec::{SgnsConfig, WalkConfig};
use crate::pretrain::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// temporal edge list, `u v t` per line
    pub edges: Option<PathBuf>,
    /// ground-truth communities, one per line
    pub communities: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeidenConfig {
    pub resolution: f64,
}

impl Default for LeidenConfig {
    fn default() -> Self {
        LeidenConfig { resolution: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// similar subgraphs pulled into the candidate space per query subgraph
    pub k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { k: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainOutput {
    /// write a checkpoint every this many epochs; 0 disables
    pub checkpoint_every: usize,
}

impl Default for PretrainOutput {
    fn default() -> Self {
        PretrainOutput { checkpoint_every: 10 }
    }
}

/// Where search embeddings come from during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// node2vec initialization followed by pre-training
    #[default]
    Trained,
    /// one-hot ground-truth membership with the ground truth as partition;
    /// a plumbing check that should score perfectly
    Oracle,
}

/// Minimum acceptable aggregate metrics; unset fields are not checked.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    /// upper bound on mean online latency in milliseconds
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub runs: usize,
    pub queries: usize,
    pub query_size_min: usize,
    pub query_size_max: usize,
    pub embedding: EmbeddingMode,
    pub thresholds: Thresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            runs: 5,
            queries: 100,
            query_size_min: 1,
            query_size_max: 3,
            embedding: EmbeddingMode::Trained,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub leiden: u64,
    pub init: u64,
    pub train: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

impl Seeds {
    /// `leiden = s, init = s + 1, train = s + 2, eval = s + 3`.
    pub fn from_base(s: u64) -> Self {
        Seeds {
            leiden: s,
            init: s.wrapping_add(1),
            train: s.wrapping_add(2),
            eval: s.wrapping_add(3),
        }
    }

    /// Seeds of benchmark run `run`. The evaluation seed is shared so every
    /// run answers the same queries.
    pub fn for_run(&self, run: usize) -> Self {
        let off = 1000u64.wrapping_mul(run as u64);
        Seeds {
            leiden: self.leiden.wrapping_add(off),
            init: self.init.wrapping_add(off),
            train: self.train.wrapping_add(off),
            eval: self.eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output: PathBuf,
    pub data: DataConfig,
    pub leiden: LeidenConfig,
    pub walk: WalkConfig,
    pub sgns: SgnsConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainOutput,
    pub search: SearchConfig,
    pub eval: EvalConfig,
    pub seeds: Seeds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output: PathBuf::from("utcs-out"),
            data: DataConfig::default(),
            leiden: LeidenConfig::default(),
            walk: WalkConfig::default(),
            sgns: SgnsConfig::default(),
            train: TrainConfig::default(),
            pretrain: PretrainOutput::default(),
            search: SearchConfig::default(),
            eval: EvalConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Training settings with the seed taken from `[seeds]`.
    pub fn train_config(&self, seeds: &Seeds) -> TrainConfig {
        TrainConfig {
            seed: seeds.train,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.sgns.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !(self.leiden.resolution > 0.0) {
            return Err(Error::Config("leiden resolution must be positive".into()));
        }
        let e = &self.eval;
        if e.query_size_min == 0 || e.query_size_min > e.query_size_max {
            return Err(Error::Config("query size range must satisfy 1 <= min <= max".into()));
        }
        if e.runs == 0 || e.queries == 0 {
            return Err(Error::Config("runs and queries must be at least 1".into()));
        }
        Ok(())
    }
}
