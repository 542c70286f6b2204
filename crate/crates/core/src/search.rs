//! Online community search.
//!
//! A query is answered locally: the candidate space is the union of the
//! partition subgraphs touching the query plus, for each, its `k` most
//! similar subgraphs by centroid cosine. Candidates are scored by cosine
//! against the mean query embedding and added greedily in score order while
//! the expected community score gain keeps rising.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::DeTemporalGraph;
use crate::leiden::Partition;
use crate::linalg::{axpy, cosine, Matrix};
use crate::pretrain::compute_centroids;

/// Non-empty, duplicate-free set of query nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    nodes: Vec<usize>,
}

impl Query {
    pub fn new(nodes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = nodes.into_iter().collect();
        if set.is_empty() {
            return Err(Error::InvalidArgument("query must contain at least one node".into()));
        }
        Ok(Query {
            nodes: set.into_iter().collect(),
        })
    }

    /// Sorted query nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.nodes.binary_search(&v).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityResult {
    /// sorted member ids
    pub members: Vec<usize>,
    /// `(candidate, score)` in candidate order
    pub scores: Vec<(usize, f64)>,
    /// accepted nodes with the ECSG value after each addition
    pub trace: Vec<(usize, f64)>,
    pub candidate_space_size: usize,
}

/// The `k` subgraphs other than `i` whose centroids are most cosine-similar
/// to `μ_i`, ties broken by smaller id.
pub fn topk_similar_subgraphs(centroids: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut sims: Vec<(f64, usize)> = (0..centroids.rows())
        .filter(|&j| j != i)
        .map(|j| (cosine(centroids.row(i), centroids.row(j)), j))
        .collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    sims.truncate(k);
    sims.into_iter().map(|(_, j)| j).collect()
}

/// Query nodes plus every subgraph touching the query and its top-`k`
/// similar subgraphs.
pub fn candidate_space(query: &Query, partition: &Partition, centroids: &Matrix, k: usize) -> Result<BTreeSet<usize>> {
    let mut out: BTreeSet<usize> = query.nodes().iter().copied().collect();
    let mut touched = BTreeSet::new();
    for &q in query.nodes() {
        touched.insert(partition.subgraph_of(q)?);
    }
    let mut included = BTreeSet::new();
    for &i in &touched {
        included.insert(i);
        included.extend(topk_similar_subgraphs(centroids, i, k));
    }
    for i in included {
        out.extend(partition.members(i).iter().copied());
    }
    Ok(out)
}

/// Cosine of each candidate against the mean query embedding.
pub fn community_scores(table: &EmbeddingTable, query: &Query, candidates: &[usize]) -> Vec<f64> {
    let mut zq = vec![0.0; table.dim()];
    for &q in query.nodes() {
        axpy(&mut zq, 1.0 / query.len() as f64, table.vector(q));
    }
    candidates.iter().map(|&v| cosine(&zq, table.vector(v))).collect()
}

/// Expected community score gain: `Σ_{v∈C} (s_v − s̄) / √|C|`, where `s̄`
/// averages all candidate scores. `community` holds positions into
/// `scores`. The graph is accepted for structure-aware variants and is not
/// consulted.
pub fn ecsg(scores: &[f64], community: &[usize], _graph: &DeTemporalGraph) -> Result<f64> {
    if community.is_empty() {
        return Err(Error::InvalidArgument("community must be non-empty".into()));
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(ecsg_centered(scores, community, mean))
}

fn ecsg_centered(scores: &[f64], community: &[usize], mean: f64) -> f64 {
    let gap: f64 = community.iter().map(|&i| scores[i] - mean).sum();
    gap / (community.len() as f64).sqrt()
}

/// Greedy expansion over explicit scores. `candidates` must be sorted and
/// contain every query node; `scores[i]` belongs to `candidates[i]`.
pub fn greedy_expand(query: &Query, candidates: &[usize], scores: &[f64]) -> Result<CommunityResult> {
    if candidates.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            found: scores.len(),
        });
    }
    let mut in_community = vec![false; candidates.len()];
    let mut community = Vec::with_capacity(candidates.len());
    for &q in query.nodes() {
        let pos = candidates
            .binary_search(&q)
            .map_err(|_| Error::InvalidArgument(format!("query node {q} is not a candidate")))?;
        in_community[pos] = true;
        community.push(pos);
    }

    // candidates by descending score; equal scores keep ascending id order
    let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| !in_community[i]).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let mut gap: f64 = community.iter().map(|&i| scores[i] - mean).sum();
    let mut max_score = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    for pos in order {
        let value = (gap + scores[pos] - mean) / ((community.len() + 1) as f64).sqrt();
        if value > max_score {
            max_score = value;
            gap += scores[pos] - mean;
            community.push(pos);
            trace.push((candidates[pos], value));
        } else {
            break;
        }
    }

    let mut members: Vec<usize> = community.iter().map(|&i| candidates[i]).collect();
    members.sort_unstable();
    Ok(CommunityResult {
        members,
        scores: candidates.iter().copied().zip(scores.iter().copied()).collect(),
        trace,
        candidate_space_size: candidates.len(),
    })
}

/// Read-only search state shared by all queries: the partition with its
/// centroid cache and the trained table.
pub struct SearchIndex<'a> {
    graph: &'a DeTemporalGraph,
    partition: &'a Partition,
    table: &'a EmbeddingTable,
    centroids: Matrix,
}

impl<'a> SearchIndex<'a> {
    pub fn new(graph: &'a DeTemporalGraph, partition: &'a Partition, table: &'a EmbeddingTable) -> Result<Self> {
        let n = graph.node_count();
        if partition.node_count() != n || table.node_count() != n {
            return Err(Error::InvalidArgument(format!(
                "graph has {n} nodes, partition {} and embedding table {}",
                partition.node_count(),
                table.node_count()
            )));
        }
        Ok(SearchIndex {
            graph,
            partition,
            table,
            centroids: compute_centroids(table, partition),
        })
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn search(&self, query: &Query, k: usize) -> Result<CommunityResult> {
        online_search(query, self.graph, self.partition, self.table, &self.centroids, k)
    }
}

/// Builds the candidate space, scores it once and grows the community from
/// the query nodes.
pub fn online_search(
    query: &Query,
    graph: &DeTemporalGraph,
    partition: &Partition,
    table: &EmbeddingTable,
    centroids: &Matrix,
    k: usize,
) -> Result<CommunityResult> {
    if let Some(&bad) = query.nodes().iter().find(|&&q| q >= graph.node_count()) {
        return Err(Error::UnknownNode(bad as u64));
    }
    let candidates: Vec<usize> = candidate_space(query, partition, centroids, k)?.into_iter().collect();
    let scores = community_scores(table, query, &candidates);
    greedy_expand(query, &candidates, &scores)
}
