//! Offline pre-training of the embedding table.
//!
//! Each epoch walks the chronological batches of the oriented edge stream.
//! Per batch the temporal loss, the node-to-subgraph alignment loss and the
//! contrastive refinement loss are summed and one clipped SGD step is taken
//! on every touched embedding row, decay scalar and subgraph centroid.

pub mod alignment;
pub mod contrastive;
pub mod temporal;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::grad::{GradAccumulator, SparseGrad};
use crate::graph::{NegativeSampler, TemporalGraph};
use crate::leiden::Partition;
use crate::linalg::Matrix;

pub use alignment::{alignment_loss, compute_centroids, soft_assignment, target_distribution};
pub use contrastive::contrastive_event_loss;
pub use temporal::{intensity, temporal_event_loss, IntensityContext};

/// Redraws allowed when a negative collides with the event's own nodes.
pub const NEGATIVE_RETRIES: usize = 100;

/// Multipliers of the three loss terms. Setting one to zero removes the term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub temporal: f64,
    pub alignment: f64,
    pub batch: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            temporal: 1.0,
            alignment: 1.0,
            batch: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// negatives per event in the temporal loss
    pub temporal_negatives: usize,
    /// most recent neighbors kept per event
    pub history: usize,
    /// negatives per event in the contrastive loss
    pub batch_negatives: usize,
    pub temperature: f64,
    /// global gradient-norm bound per batch; 0 disables clipping
    pub grad_clip: f64,
    pub weights: LossWeights,
    /// filled from the pipeline seeds, not read from config files
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1024,
            learning_rate: 0.01,
            temporal_negatives: 3,
            history: 3,
            batch_negatives: 3,
            temperature: 0.5,
            grad_clip: 5.0,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.temporal_negatives == 0 || self.batch_negatives == 0 {
            return bad("negative counts must be at least 1");
        }
        if self.history == 0 {
            return bad("history length must be at least 1");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("gradient clip must be non-negative");
        }
        let w = self.weights;
        if [w.temporal, w.alignment, w.batch].iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Mean loss terms of one epoch, averaged over its batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_tmp: f64,
    pub l_node: f64,
    pub l_batch: f64,
    pub total: f64,
    pub wall_time_s: f64,
}

/// One event with its history and pre-drawn negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSample {
    pub ctx: IntensityContext,
    pub temporal_negatives: Vec<usize>,
    pub batch_negatives: Vec<usize>,
}

impl EventSample {
    /// History nodes followed by the target.
    pub fn positives(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.ctx.history.iter().map(|&(h, _)| h).collect();
        p.push(self.ctx.target);
        p
    }
}

fn draw(sampler: &mut NegativeSampler, excluded: &[usize], count: usize) -> Vec<usize> {
    (0..count)
        .filter_map(|_| sampler.sample_excluding(excluded, NEGATIVE_RETRIES))
        .collect()
}

/// Draws negatives for every context in order. Temporal negatives avoid the
/// source and target; contrastive negatives additionally avoid the history.
pub fn draw_samples(
    contexts: &[IntensityContext],
    sampler: &mut NegativeSampler,
    temporal_negatives: usize,
    batch_negatives: usize,
) -> Vec<EventSample> {
    contexts
        .iter()
        .map(|ctx| {
            let temporal = draw(sampler, &[ctx.source, ctx.target], temporal_negatives);
            let mut excluded: Vec<usize> = ctx.history.iter().map(|&(h, _)| h).collect();
            excluded.push(ctx.source);
            excluded.push(ctx.target);
            EventSample {
                ctx: ctx.clone(),
                temporal_negatives: temporal,
                batch_negatives: draw(sampler, &excluded, batch_negatives),
            }
        })
        .collect()
}

/// Mean temporal loss over `samples` and its gradient.
pub fn temporal_loss(samples: &[EventSample], table: &EmbeddingTable) -> (f64, SparseGrad) {
    let mut grad = SparseGrad::new(table.dim());
    if samples.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / samples.len() as f64;
    let total: f64 = samples
        .iter()
        .map(|s| temporal_event_loss(&s.ctx, &s.temporal_negatives, table, Some((&mut grad, scale))))
        .sum();
    (total * scale, grad)
}

/// Mean contrastive refinement loss over `samples` and its gradient.
pub fn batch_refinement_loss(samples: &[EventSample], table: &EmbeddingTable, temperature: f64) -> (f64, SparseGrad) {
    let mut grad = SparseGrad::new(table.dim());
    if samples.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / samples.len() as f64;
    let total: f64 = samples
        .iter()
        .map(|s| {
            contrastive_event_loss(
                s.ctx.source,
                &s.positives(),
                &s.batch_negatives,
                temperature,
                table,
                Some((&mut grad, scale)),
            )
        })
        .sum();
    (total * scale, grad)
}

/// Nodes appearing in a batch, first-appearance order.
fn batch_nodes(contexts: &[IntensityContext], seen: &mut [bool]) -> Vec<usize> {
    let mut out = Vec::new();
    for c in contexts {
        for v in [c.source, c.target] {
            if !seen[v] {
                seen[v] = true;
                out.push(v);
            }
        }
    }
    for &v in &out {
        seen[v] = false;
    }
    out
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Holds the fixed per-graph state of a training run: batched intensity
/// contexts and the degree table of the negative sampler.
pub struct Trainer<'a> {
    graph: &'a TemporalGraph,
    partition: &'a Partition,
    cfg: TrainConfig,
    batches: Vec<Vec<IntensityContext>>,
}

impl<'a> Trainer<'a> {
    pub fn new(graph: &'a TemporalGraph, partition: &'a Partition, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if partition.node_count() != graph.node_count() {
            return Err(Error::InvalidArgument(format!(
                "partition covers {} nodes, graph has {}",
                partition.node_count(),
                graph.node_count()
            )));
        }
        if graph.edge_count() == 0 {
            return Err(Error::NoEdges);
        }
        let batches = graph
            .edge_batches(cfg.batch_size)?
            .into_iter()
            .map(|b| {
                b.events
                    .iter()
                    .map(|e| IntensityContext {
                        source: e.u,
                        target: e.v,
                        time: graph.normalized_time(e.t),
                        history: graph
                            .temporal_neighbors(e.u, e.t, cfg.history)
                            .into_iter()
                            .map(|(h, t)| (h, graph.normalized_time(t)))
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        Ok(Trainer {
            graph,
            partition,
            cfg,
            batches,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    /// Runs one epoch in place. Epoch numbers start at 1; randomness depends
    /// only on the seed and the epoch number, so training can resume from a
    /// saved table.
    pub fn run_epoch(&self, table: &mut EmbeddingTable, epoch: usize) -> Result<EpochLog> {
        let start = Instant::now();
        let n = self.graph.node_count();
        if table.node_count() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: table.node_count(),
            });
        }
        let cfg = &self.cfg;
        let w = cfg.weights;
        let mut sampler = NegativeSampler::from_degrees(&self.graph.detemporalize(), epoch_seed(cfg.seed, epoch))?;

        let mut centroids = compute_centroids(table, self.partition);
        let target = target_distribution(&soft_assignment(table, &centroids));

        let mut acc = GradAccumulator::new(n, table.dim());
        acc.centroids = Some(Matrix::zeros(centroids.rows(), centroids.cols()));
        let mut seen = vec![false; n];
        let (mut sum_tmp, mut sum_node, mut sum_batch) = (0.0, 0.0, 0.0);

        for (b, contexts) in self.batches.iter().enumerate() {
            let samples = draw_samples(contexts, &mut sampler, cfg.temporal_negatives, cfg.batch_negatives);
            let inv = 1.0 / samples.len() as f64;
            let current: &EmbeddingTable = table;
            let terms: Vec<(f64, f64, SparseGrad)> = samples
                .par_iter()
                .map(|s| {
                    let mut g = SparseGrad::new(current.dim());
                    let lt = if w.temporal > 0.0 {
                        temporal_event_loss(&s.ctx, &s.temporal_negatives, current, Some((&mut g, w.temporal)))
                    } else {
                        0.0
                    };
                    let lb = if w.batch > 0.0 {
                        contrastive_event_loss(
                            s.ctx.source,
                            &s.positives(),
                            &s.batch_negatives,
                            cfg.temperature,
                            current,
                            Some((&mut g, w.batch)),
                        )
                    } else {
                        0.0
                    };
                    (lt, lb, g)
                })
                .collect();

            let (mut l_tmp, mut l_batch) = (0.0, 0.0);
            for (lt, lb, g) in &terms {
                l_tmp += lt;
                l_batch += lb;
                acc.add_sparse(g, inv);
            }
            l_tmp *= inv;
            l_batch *= inv;

            let l_node = if w.alignment > 0.0 {
                let rows = batch_nodes(contexts, &mut seen);
                alignment_loss(&target, table, &centroids, &rows, Some((&mut acc, w.alignment)))
            } else {
                0.0
            };

            let total = w.temporal * l_tmp + w.alignment * l_node + w.batch * l_batch;
            let norm = acc.squared_norm();
            if !total.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("L_tmp={l_tmp} L_node={l_node} L_batch={l_batch} grad_norm²={norm}"),
                });
            }
            acc.apply(table, Some(&mut centroids), cfg.learning_rate, cfg.grad_clip);
            acc.clear();
            sum_tmp += l_tmp;
            sum_node += l_node;
            sum_batch += l_batch;
        }

        let nb = self.batches.len() as f64;
        let (l_tmp, l_node, l_batch) = (sum_tmp / nb, sum_node / nb, sum_batch / nb);
        let log = EpochLog {
            epoch,
            l_tmp,
            l_node,
            l_batch,
            total: w.temporal * l_tmp + w.alignment * l_node + w.batch * l_batch,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: L_tmp={:.6} L_node={:.6} L_batch={:.6} total={:.6}",
            log.l_tmp,
            log.l_node,
            log.l_batch,
            log.total
        );
        Ok(log)
    }

    /// Runs epochs `start_epoch + 1 ..= cfg.epochs`, calling `on_epoch` after
    /// each one.
    pub fn run(
        &self,
        table: &mut EmbeddingTable,
        start_epoch: usize,
        mut on_epoch: impl FnMut(&EpochLog, &EmbeddingTable) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        for epoch in start_epoch + 1..=self.cfg.epochs {
            let log = self.run_epoch(table, epoch)?;
            on_epoch(&log, table)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Trains a copy of `init` for `cfg.epochs` epochs and returns it with the
/// per-epoch loss log.
pub fn pretrain(
    graph: &TemporalGraph,
    partition: &Partition,
    init: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<(EmbeddingTable, Vec<EpochLog>)> {
    let mut table = init.clone();
    if cfg.epochs == 0 {
        cfg.validate()?;
        return Ok((table, Vec::new()));
    }
    let trainer = Trainer::new(graph, partition, cfg.clone())?;
    let logs = trainer.run(&mut table, 0, |_, _| Ok(()))?;
    Ok((table, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TemporalEdge;
    use crate::linalg::cosine;

    /// Two groups of five nodes with dense repeated contact inside each group
    /// and a single bridge.
    fn planted() -> (TemporalGraph, Partition) {
        let mut edges = Vec::new();
        let mut t = 0;
        for round in 0..6 {
            for base in [0, 5] {
                for i in 0..5 {
                    for j in i + 1..5 {
                        if (i + j + round) % 2 == 0 {
                            edges.push(TemporalEdge::new(base + i, base + j, t));
                            t += 1;
                        }
                    }
                }
            }
        }
        edges.push(TemporalEdge::new(4, 5, t));
        let g = TemporalGraph::from_edges(10, edges).unwrap();
        let p = Partition::from_assignment(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        (g, p)
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (g, p) = planted();
        let init = EmbeddingTable::random(10, 8, 1).unwrap();
        let (out, logs) = pretrain(&g, &p, &init, &small_cfg(0)).unwrap();
        assert_eq!(out, init);
        assert!(logs.is_empty());
    }

    #[test]
    fn one_log_line_per_epoch() {
        let (g, p) = planted();
        let init = EmbeddingTable::random(10, 8, 1).unwrap();
        let (_, logs) = pretrain(&g, &p, &init, &small_cfg(4)).unwrap();
        assert_eq!(logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(logs.iter().all(|l| l.total.is_finite() && l.l_tmp >= 0.0 && l.l_node >= -1e-12));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (g, p) = planted();
        let init = EmbeddingTable::random(10, 8, 1).unwrap();
        let cfg = small_cfg(6);
        let (full, _) = pretrain(&g, &p, &init, &cfg).unwrap();

        let trainer = Trainer::new(&g, &p, cfg).unwrap();
        let mut table = init.clone();
        for epoch in 1..=3 {
            trainer.run_epoch(&mut table, epoch).unwrap();
        }
        trainer.run(&mut table, 3, |_, _| Ok(())).unwrap();
        assert_eq!(table, full);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (g, p) = planted();
        let init = EmbeddingTable::random(10, 8, 1).unwrap();
        let a = pretrain(&g, &p, &init, &small_cfg(3)).unwrap().0;
        let b = pretrain(&g, &p, &init, &small_cfg(3)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn separates_planted_groups() {
        let (g, p) = planted();
        let init = EmbeddingTable::random(10, 8, 1).unwrap();
        let (out, _) = pretrain(&g, &p, &init, &small_cfg(60)).unwrap();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for a in 0..10 {
            for b in a + 1..10 {
                let c = cosine(out.vector(a), out.vector(b));
                if (a < 5) == (b < 5) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        assert!(intra / ni as f64 > inter / nx as f64);
    }

    #[test]
    fn rejects_invalid_config() {
        let (g, p) = planted();
        for cfg in [
            TrainConfig { temperature: 0.0, ..small_cfg(1) },
            TrainConfig { batch_size: 0, ..small_cfg(1) },
            TrainConfig { history: 0, ..small_cfg(1) },
            TrainConfig { temporal_negatives: 0, ..small_cfg(1) },
        ] {
            assert!(Trainer::new(&g, &p, cfg).is_err());
        }
    }

    #[test]
    fn batch_losses_match_event_sums() {
        let (g, p) = planted();
        let table = EmbeddingTable::random(10, 6, 4).unwrap();
        let trainer = Trainer::new(&g, &p, small_cfg(1)).unwrap();
        let mut sampler = NegativeSampler::from_degrees(&g.detemporalize(), 9).unwrap();
        let samples = draw_samples(&trainer.batches[0], &mut sampler, 3, 3);
        for s in &samples {
            assert!(!s.temporal_negatives.contains(&s.ctx.source));
            assert!(!s.temporal_negatives.contains(&s.ctx.target));
            assert!(s.positives().iter().all(|v| !s.batch_negatives.contains(v)));
        }
        let (lt, _) = temporal_loss(&samples, &table);
        let direct: f64 = samples
            .iter()
            .map(|s| temporal_event_loss(&s.ctx, &s.temporal_negatives, &table, None))
            .sum::<f64>()
            / samples.len() as f64;
        assert!((lt - direct).abs() < 1e-12);
        let (lb, _) = batch_refinement_loss(&samples, &table, 0.5);
        assert!(lb > 0.0);
    }
}
