//! Leiden community detection under modularity with a resolution parameter.
//!
//! Each level runs queue-based local moving, then refines every community by
//! randomized merges of singletons restricted to the community, then
//! aggregates the refined communities into a coarser graph whose initial
//! partition is the unrefined one. Levels repeat until local moving leaves
//! every aggregate node in its own community.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::DeTemporalGraph;

/// Randomness of the refinement merge; small values approach greedy merging.
const REFINE_THETA: f64 = 0.01;
const GAIN_EPS: f64 = 1e-12;
const MAX_LEVELS: usize = 256;

/// Disjoint assignment of every node to exactly one subgraph.
///
/// Subgraph ids are canonical: ordered by the smallest node id they contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition from an arbitrary labelling, renumbering labels
    /// canonically and dropping empty ones.
    pub fn from_assignment(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut assignment = Vec::with_capacity(labels.len());
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (v, &label) in labels.iter().enumerate() {
            let id = *remap.entry(label).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            assignment.push(id);
            members[id].push(v);
        }
        Partition {
            assignment,
            members,
        }
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn subgraph_count(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, subgraph: usize) -> &[usize] {
        &self.members[subgraph]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn subgraph_of(&self, v: usize) -> Result<usize> {
        self.assignment
            .get(v)
            .copied()
            .ok_or(Error::UnknownNode(v as u64))
    }

    /// Two-column text: `node subgraph`.
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        for (v, c) in self.assignment.iter().enumerate() {
            writeln!(out, "{v} {c}")?;
        }
        Ok(())
    }

    pub fn read_text(input: impl BufRead) -> Result<Self> {
        let mut labels = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: format!("expected `node subgraph`, found `{line}`"),
                })
            };
            let v = parse(parts.next())?;
            let c = parse(parts.next())?;
            if v != labels.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected node {}, found {v}", labels.len()),
                });
            }
            labels.push(c);
        }
        Ok(Self::from_assignment(&labels))
    }
}

/// `Σ_c [e_c / m − γ (d_c / 2m)²]` over the communities of `p`.
pub fn modularity(g: &DeTemporalGraph, p: &Partition, resolution: f64) -> Result<f64> {
    if g.edge_count() == 0 {
        return Err(Error::NoEdges);
    }
    if p.node_count() != g.node_count() {
        return Err(Error::DimensionMismatch {
            expected: g.node_count(),
            found: p.node_count(),
        });
    }
    let m = g.edge_count() as f64;
    let k = p.subgraph_count();
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for v in 0..g.node_count() {
        degree[p.assignment[v]] += g.degree(v) as f64;
    }
    for (u, v) in g.edges() {
        if p.assignment[u] == p.assignment[v] {
            internal[p.assignment[u]] += 1.0;
        }
    }
    Ok(internal
        .iter()
        .zip(&degree)
        .map(|(e, d)| e / m - resolution * (d / (2.0 * m)).powi(2))
        .sum())
}

/// Runs Leiden with the given resolution and seed.
pub fn leiden_partition(g: &DeTemporalGraph, resolution: f64, seed: u64) -> Result<Partition> {
    leiden_partition_traced(g, resolution, seed).map(|(p, _)| p)
}

/// Like [`leiden_partition`], also returning the modularity of the current
/// partition (on `g`) after every local-moving sweep, in order.
pub fn leiden_partition_traced(
    g: &DeTemporalGraph,
    resolution: f64,
    seed: u64,
) -> Result<(Partition, Vec<f64>)> {
    if g.node_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let n = g.node_count();
    if g.edge_count() == 0 {
        let labels: Vec<usize> = (0..n).collect();
        return Ok((Partition::from_assignment(&labels), Vec::new()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = LevelGraph::from_graph(g);
    // original node -> node of the current level graph
    let mut node_to_level: Vec<usize> = (0..n).collect();
    let mut community: Vec<usize> = (0..n).collect();
    let mut trace = Vec::new();

    for _ in 0..MAX_LEVELS {
        move_nodes_fast(&level, &mut community, resolution, &mut rng, &mut trace);
        let communities = renumber(&mut community);
        if communities == level.n {
            break;
        }
        let refined = refine(&level, &community, communities, resolution, &mut rng);
        if refined.iter().max().map_or(0, |&c| c + 1) == level.n {
            // nothing merged, so the next level would repeat this one
            break;
        }
        let (next, level_map) = level.aggregate(&refined);
        // aggregate nodes start in the unrefined community they came from
        let mut next_community = vec![0; next.n];
        for v in 0..level.n {
            next_community[level_map[v]] = community[v];
        }
        for x in node_to_level.iter_mut() {
            *x = level_map[*x];
        }
        level = next;
        community = next_community;
    }

    let labels: Vec<usize> = node_to_level.iter().map(|&x| community[x]).collect();
    let labels = split_disconnected(g, &labels);
    let partition = Partition::from_assignment(&labels);
    // splitting never lowers modularity; record the final value
    trace.push(modularity(g, &partition, resolution)?);
    Ok((partition, trace))
}

/// Relabels so that every community is connected in `g`. Splitting a
/// community into its components removes no internal edge and can only lower
/// the degree penalty.
fn split_disconnected(g: &DeTemporalGraph, labels: &[usize]) -> Vec<usize> {
    let n = g.node_count();
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        out[start] = next;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &u in g.neighbors(v) {
                if out[u] == usize::MAX && labels[u] == labels[start] {
                    out[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    out
}

/// Weighted graph for one aggregation level.
struct LevelGraph {
    n: usize,
    /// neighbor lists without self-loops
    adj: Vec<Vec<(usize, f64)>>,
    /// weight of edges internal to the aggregate node
    self_weight: Vec<f64>,
    /// total incident weight, counting internal edges twice
    strength: Vec<f64>,
    /// total edge weight m of the original graph
    total: f64,
}

impl LevelGraph {
    fn from_graph(g: &DeTemporalGraph) -> Self {
        let n = g.node_count();
        let adj: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|v| g.neighbors(v).iter().map(|&u| (u, 1.0)).collect())
            .collect();
        let strength = (0..n).map(|v| g.degree(v) as f64).collect();
        LevelGraph {
            n,
            adj,
            self_weight: vec![0.0; n],
            strength,
            total: g.edge_count() as f64,
        }
    }

    /// Collapses each label of `refined` (dense, `0..k`) into one node.
    fn aggregate(&self, refined: &[usize]) -> (LevelGraph, Vec<usize>) {
        let k = refined.iter().max().map_or(0, |&c| c + 1);
        let mut self_weight = vec![0.0; k];
        let mut strength = vec![0.0; k];
        let mut adj_acc: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        for v in 0..self.n {
            let cv = refined[v];
            self_weight[cv] += self.self_weight[v];
            strength[cv] += self.strength[v];
            for &(u, w) in &self.adj[v] {
                let cu = refined[u];
                if cu == cv {
                    if u > v {
                        self_weight[cv] += w;
                    }
                } else {
                    adj_acc[cv].push((cu, w));
                }
            }
        }
        let adj = adj_acc
            .into_iter()
            .map(|mut list| {
                list.sort_unstable_by_key(|&(u, _)| u);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
                for (u, w) in list {
                    match merged.last_mut() {
                        Some(last) if last.0 == u => last.1 += w,
                        _ => merged.push((u, w)),
                    }
                }
                merged
            })
            .collect();
        (
            LevelGraph {
                n: k,
                adj,
                self_weight,
                strength,
                total: self.total,
            },
            refined.to_vec(),
        )
    }

    fn quality(&self, community: &[usize], resolution: f64) -> f64 {
        let k = community.iter().max().map_or(0, |&c| c + 1);
        let mut internal = vec![0.0; k];
        let mut strength = vec![0.0; k];
        for v in 0..self.n {
            let c = community[v];
            internal[c] += self.self_weight[v];
            strength[c] += self.strength[v];
            for &(u, w) in &self.adj[v] {
                if u > v && community[u] == c {
                    internal[c] += w;
                }
            }
        }
        let m = self.total;
        internal
            .iter()
            .zip(&strength)
            .map(|(e, d)| e / m - resolution * (d / (2.0 * m)).powi(2))
            .sum()
    }
}

/// Renumbers labels to `0..k` in order of first appearance; returns `k`.
fn renumber(labels: &mut [usize]) -> usize {
    let mut map = vec![usize::MAX; labels.len().max(1 + labels.iter().copied().max().unwrap_or(0))];
    let mut next = 0;
    for l in labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    next
}

/// Queue-based local moving. Moves a node only on a strictly positive gain.
fn move_nodes_fast(
    g: &LevelGraph,
    community: &mut [usize],
    resolution: f64,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<f64>,
) {
    let n = g.n;
    let two_m = 2.0 * g.total;
    // labels live in 0..n; unused labels form the pool of empty communities
    let mut comm_strength = vec![0.0; n];
    let mut comm_size = vec![0usize; n];
    for v in 0..n {
        comm_strength[community[v]] += g.strength[v];
        comm_size[community[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| comm_size[c] == 0).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];

    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut visits = 0usize;
    trace.push(g.quality(community, resolution));

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let kv = g.strength[v];
        let old = community[v];

        for &(u, w) in &g.adj[v] {
            let c = community[u];
            if link[c] == 0.0 {
                touched.push(c);
            }
            link[c] += w;
        }

        comm_strength[old] -= kv;
        comm_size[old] -= 1;
        let gain = |c: usize, w: f64, strength: &[f64]| w - resolution * kv * strength[c] / two_m;
        let stay_gain = gain(old, link[old], &comm_strength);

        let mut best = old;
        let mut best_gain = stay_gain;
        for &c in &touched {
            if c == old {
                continue;
            }
            let gc = gain(c, link[c], &comm_strength);
            if gc > best_gain + GAIN_EPS {
                best = c;
                best_gain = gc;
            }
        }
        // an empty community has gain 0
        if comm_size[old] > 0 && 0.0 > best_gain + GAIN_EPS {
            if let Some(&c) = empty.last() {
                best = c;
            }
        }

        if best != old && comm_size[best] == 0 {
            empty.pop();
        }
        community[v] = best;
        comm_strength[best] += kv;
        comm_size[best] += 1;
        if comm_size[old] == 0 && best != old {
            empty.push(old);
        }

        if best != old {
            for &(u, _) in &g.adj[v] {
                if !queued[u] && community[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }

        for &c in &touched {
            link[c] = 0.0;
        }
        touched.clear();

        visits += 1;
        if visits % n == 0 || queue.is_empty() {
            trace.push(g.quality(community, resolution));
        }
    }
}

/// Refines each community of `community` (dense labels `0..k`) by merging
/// singletons into well-connected sub-communities. Returns dense refined
/// labels.
fn refine(
    g: &LevelGraph,
    community: &[usize],
    k: usize,
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = g.n;
    let two_m = 2.0 * g.total;
    let mut refined: Vec<usize> = (0..n).collect();
    let mut ref_strength = g.strength.clone();
    let mut ref_size = vec![1usize; n];
    // weight from each refined community to the rest of its parent community
    let mut ref_external = vec![0.0; n];
    let mut parent_strength = vec![0.0; k];
    for v in 0..n {
        parent_strength[community[v]] += g.strength[v];
        for &(u, w) in &g.adj[v] {
            if community[u] == community[v] {
                ref_external[v] += w;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut candidates: Vec<(usize, f64)> = Vec::new();

    for v in order {
        let parent = community[v];
        let kv = g.strength[v];
        let ks = parent_strength[parent];
        if ref_size[refined[v]] != 1 {
            continue;
        }
        // v must itself be well connected to its parent community
        if ref_external[refined[v]] < resolution * kv * (ks - kv) / two_m {
            continue;
        }

        for &(u, w) in &g.adj[v] {
            if community[u] != parent {
                continue;
            }
            let c = refined[u];
            if link[c] == 0.0 {
                touched.push(c);
            }
            link[c] += w;
        }

        let own = refined[v];
        candidates.clear();
        candidates.push((own, 0.0));
        for &c in &touched {
            if c == own {
                continue;
            }
            let kc = ref_strength[c];
            if ref_external[c] < resolution * kc * (ks - kc) / two_m {
                continue;
            }
            let delta = link[c] - resolution * kv * kc / two_m;
            if delta >= 0.0 {
                candidates.push((c, delta));
            }
        }

        let chosen = if candidates.len() == 1 {
            own
        } else {
            let max = candidates.iter().map(|&(_, d)| d).fold(f64::MIN, f64::max);
            let weights: Vec<f64> = candidates
                .iter()
                .map(|&(_, d)| ((d - max) / REFINE_THETA).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut x = rng.gen::<f64>() * total;
            let mut pick = candidates.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if x < *w {
                    pick = i;
                    break;
                }
                x -= w;
            }
            candidates[pick].0
        };

        if chosen != own {
            let w_to = link[chosen];
            ref_external[chosen] = ref_external[chosen] + ref_external[own] - 2.0 * w_to;
            ref_strength[chosen] += kv;
            ref_size[chosen] += 1;
            ref_strength[own] = 0.0;
            ref_size[own] = 0;
            ref_external[own] = 0.0;
            refined[v] = chosen;
        }

        for &c in &touched {
            link[c] = 0.0;
        }
        touched.clear();
    }

    renumber(&mut refined);
    refined
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> DeTemporalGraph {
        DeTemporalGraph::from_pairs(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    }

    fn complete(n: usize) -> DeTemporalGraph {
        let mut pairs = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                pairs.push((u, v));
            }
        }
        DeTemporalGraph::from_pairs(n, pairs)
    }

    #[test]
    fn modularity_of_known_partitions() {
        let g = two_triangles();
        let p = Partition::from_assignment(&[0, 0, 0, 1, 1, 1]);
        assert!((modularity(&g, &p, 1.0).unwrap() - 0.5).abs() < 1e-15);

        let one = Partition::from_assignment(&[0; 6]);
        assert!(modularity(&g, &one, 1.0).unwrap().abs() < 1e-15);

        let tri = complete(3);
        let singles = Partition::from_assignment(&[0, 1, 2]);
        assert!((modularity(&tri, &singles, 1.0).unwrap() + 1.0 / 3.0).abs() < 1e-15);

        let empty = DeTemporalGraph::from_pairs(2, std::iter::empty());
        assert!(matches!(
            modularity(&empty, &Partition::from_assignment(&[0, 1]), 1.0),
            Err(Error::NoEdges)
        ));
    }

    #[test]
    fn recovers_two_triangles() {
        let p = leiden_partition(&two_triangles(), 1.0, 11).unwrap();
        assert_eq!(p.assignment(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!(p.subgraph_of(1).unwrap(), p.subgraph_of(2).unwrap());
        assert_ne!(p.subgraph_of(0).unwrap(), p.subgraph_of(4).unwrap());
        assert!(p.subgraph_of(6).is_err());
    }

    #[test]
    fn complete_graph_is_one_community() {
        for seed in 0..5 {
            let p = leiden_partition(&complete(5), 1.0, seed).unwrap();
            assert_eq!(p.subgraph_count(), 1);
        }
    }

    #[test]
    fn single_node_and_empty_graph() {
        let g = DeTemporalGraph::from_pairs(1, std::iter::empty());
        let p = leiden_partition(&g, 1.0, 0).unwrap();
        assert_eq!(p.subgraph_count(), 1);
        assert_eq!(p.subgraph_of(0).unwrap(), 0);

        let g = DeTemporalGraph::from_pairs(0, std::iter::empty());
        assert!(matches!(leiden_partition(&g, 1.0, 0), Err(Error::EmptyGraph)));
    }

    #[test]
    fn isolated_nodes_stay_alone() {
        let g = DeTemporalGraph::from_pairs(5, [(0, 1), (1, 2), (0, 2)]);
        let p = leiden_partition(&g, 1.0, 3).unwrap();
        assert_eq!(p.subgraph_count(), 3);
        assert_eq!(p.members(p.subgraph_of(3).unwrap()), &[3]);
    }

    #[test]
    fn partition_text_round_trip() {
        let p = leiden_partition(&two_triangles(), 1.0, 5).unwrap();
        let mut buf = Vec::new();
        p.write_text(&mut buf).unwrap();
        assert_eq!(Partition::read_text(buf.as_slice()).unwrap(), p);
        assert!(Partition::read_text("0 0\n2 1\n".as_bytes()).is_err());
    }

    #[test]
    fn canonical_ids_follow_smallest_member() {
        let p = Partition::from_assignment(&[7, 3, 7, 9, 3]);
        assert_eq!(p.assignment(), &[0, 1, 0, 2, 1]);
        assert_eq!(p.members(1), &[1, 4]);
    }
}
