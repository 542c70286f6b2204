//! The offline stages chained together: partition, initialize, pre-train.

use crate::config::{PipelineConfig, Seeds};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{DeTemporalGraph, TemporalGraph};
use crate::leiden::{leiden_partition, Partition};
use crate::node2vec::{generate_walks, train_init};
use crate::pretrain::{pretrain, EpochLog};

/// Artifacts of one offline run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub detemporal: DeTemporalGraph,
    pub partition: Partition,
    pub init: EmbeddingTable,
    pub table: EmbeddingTable,
    pub logs: Vec<EpochLog>,
}

pub fn build_partition(g: &DeTemporalGraph, cfg: &PipelineConfig, seeds: &Seeds) -> Result<Partition> {
    leiden_partition(g, cfg.leiden.resolution, seeds.leiden)
}

/// node2vec walks followed by skip-gram training.
pub fn initial_embeddings(g: &DeTemporalGraph, cfg: &PipelineConfig, seeds: &Seeds) -> Result<EmbeddingTable> {
    let corpus = generate_walks(g, &cfg.walk, seeds.init)?;
    train_init(&corpus, g, &cfg.sgns, seeds.init)
}

/// Checks that persisted artifacts agree with the graph and configuration.
pub fn check_table(table: &EmbeddingTable, g: &DeTemporalGraph, cfg: &PipelineConfig) -> Result<()> {
    if table.node_count() != g.node_count() {
        return Err(Error::DimensionMismatch {
            expected: g.node_count(),
            found: table.node_count(),
        });
    }
    if table.dim() != cfg.sgns.dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.sgns.dim,
            found: table.dim(),
        });
    }
    Ok(())
}

pub fn run_pipeline(graph: &TemporalGraph, cfg: &PipelineConfig, seeds: &Seeds) -> Result<Trained> {
    let detemporal = graph.detemporalize();
    let partition = build_partition(&detemporal, cfg, seeds)?;
    let init = initial_embeddings(&detemporal, cfg, seeds)?;
    let (table, logs) = pretrain(graph, &partition, &init, &cfg.train_config(seeds))?;
    Ok(Trained {
        detemporal,
        partition,
        init,
        table,
        logs,
    })
}
