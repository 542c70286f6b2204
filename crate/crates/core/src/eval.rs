//! Effectiveness metrics, ground truth, query workloads and the benchmark
//! driver.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EmbeddingMode, PipelineConfig, Seeds, Thresholds};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::leiden::Partition;
use crate::linalg::Matrix;
use crate::pipeline::run_pipeline;
use crate::search::{Query, SearchIndex};

/// Community picks allowed before giving up on finding one with at least
/// the minimum query size.
const COMMUNITY_RETRIES: usize = 1000;

fn sorted_unique(v: &[usize]) -> Vec<usize> {
    let mut out = v.to_vec();
    out.sort_unstable();
    out.dedup();
    out
}

/// `(|pred ∩ truth|, |pred|, |truth|)` over distinct ids.
fn overlap(pred: &[usize], truth: &[usize]) -> (usize, usize, usize) {
    let p = sorted_unique(pred);
    let t = sorted_unique(truth);
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < p.len() && j < t.len() {
        match p[i].cmp(&t[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (inter, p.len(), t.len())
}

/// Harmonic mean of precision and recall; 0 when `pred` is empty or
/// disjoint from `truth`.
pub fn f1(pred: &[usize], truth: &[usize]) -> f64 {
    let (inter, np, nt) = overlap(pred, truth);
    if inter == 0 {
        return 0.0;
    }
    let p = inter as f64 / np as f64;
    let r = inter as f64 / nt as f64;
    2.0 * p * r / (p + r)
}

pub fn jaccard(pred: &[usize], truth: &[usize]) -> f64 {
    let (inter, np, nt) = overlap(pred, truth);
    let union = np + nt - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information between the member/non-member labelings
/// of `pred` and `truth` over `n` nodes. When a labeling is constant the
/// value is 1 if the labelings agree and 0 otherwise.
pub fn nmi(pred: &[usize], truth: &[usize], n: usize) -> f64 {
    let (inter, np, nt) = overlap(pred, truth);
    let n11 = inter;
    let n10 = np - inter;
    let n01 = nt - inter;
    let n00 = n - n11 - n10 - n01;
    let nf = n as f64;
    let hx = entropy(&[np, n - np], nf);
    let hy = entropy(&[nt, n - nt], nf);
    if hx == 0.0 || hy == 0.0 {
        return if n10 == 0 && n01 == 0 { 1.0 } else { 0.0 };
    }
    let joint = entropy(&[n11, n10, n01, n00], nf);
    let mi = hx + hy - joint;
    (2.0 * mi / (hx + hy)).clamp(0.0, 1.0)
}

/// Ground-truth communities as sorted internal node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    communities: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn new(communities: Vec<Vec<usize>>) -> Result<Self> {
        let mut out = Vec::with_capacity(communities.len());
        for c in communities {
            let set: BTreeSet<usize> = c.into_iter().collect();
            if set.is_empty() {
                return Err(Error::InvalidArgument("ground-truth community is empty".into()));
            }
            out.push(set.into_iter().collect());
        }
        Ok(GroundTruth { communities: out })
    }

    /// One community per line, whitespace- or comma-separated original ids.
    /// Blank lines and `#` comments are skipped; ids missing from the graph
    /// are an error.
    pub fn from_reader(reader: impl BufRead, graph: &TemporalGraph) -> Result<Self> {
        let mut communities = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut members = Vec::new();
            for tok in body.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                let id: u64 = tok.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("invalid node id {tok:?}"),
                })?;
                members.push(graph.node_index(id).ok_or(Error::UnknownNode(id))?);
            }
            communities.push(members);
        }
        Self::new(communities)
    }

    pub fn load(path: impl AsRef<Path>, graph: &TemporalGraph) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file), graph)
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn community(&self, i: usize) -> &[usize] {
        &self.communities[i]
    }

    pub fn communities(&self) -> &[Vec<usize>] {
        &self.communities
    }

    /// Partition with one subgraph per community (first community wins for
    /// overlapping nodes) and a singleton for every uncovered node.
    pub fn as_partition(&self, n: usize) -> Partition {
        let mut label = vec![usize::MAX; n];
        for (i, c) in self.communities.iter().enumerate() {
            for &v in c {
                if label[v] == usize::MAX {
                    label[v] = i;
                }
            }
        }
        let mut next = self.communities.len();
        for l in label.iter_mut().filter(|l| **l == usize::MAX) {
            *l = next;
            next += 1;
        }
        Partition::from_assignment(&label)
    }

    /// Multi-hot membership vectors, one dimension per community.
    pub fn oracle_embeddings(&self, n: usize) -> Result<EmbeddingTable> {
        let mut m = Matrix::zeros(n, self.communities.len().max(1));
        for (i, c) in self.communities.iter().enumerate() {
            for &v in c {
                m.set(v, i, 1.0);
            }
        }
        EmbeddingTable::new(m, vec![1.0; n])
    }
}

/// A generated query and the index of the community it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadQuery {
    pub query: Query,
    pub truth: usize,
}

/// Draws `count` queries: a community uniformly at random, then between
/// `min_size` and `max_size` distinct members of it.
pub fn generate_queries(
    gt: &GroundTruth,
    count: usize,
    min_size: usize,
    max_size: usize,
    seed: u64,
) -> Result<Vec<WorkloadQuery>> {
    if count == 0 || min_size == 0 || min_size > max_size {
        return Err(Error::InvalidArgument(format!(
            "invalid workload: count={count}, sizes {min_size}..={max_size}"
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument("ground truth has no communities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut picked = None;
        for _ in 0..COMMUNITY_RETRIES {
            let c = rng.gen_range(0..gt.len());
            if gt.community(c).len() >= min_size {
                picked = Some(c);
                break;
            }
        }
        let c = picked.ok_or_else(|| {
            Error::InvalidArgument(format!("no community has at least {min_size} members"))
        })?;
        let members = gt.community(c);
        let size = rng.gen_range(min_size..=max_size).min(members.len());
        let nodes = sample(&mut rng, members.len(), size).into_iter().map(|i| members[i]);
        out.push(WorkloadQuery {
            query: Query::new(nodes)?,
            truth: c,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub query: Vec<usize>,
    pub truth: usize,
    pub members: Vec<usize>,
    pub f1: f64,
    pub jaccard: f64,
    pub nmi: f64,
    pub latency_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run: usize,
    pub seeds: Seeds,
    pub f1: f64,
    pub jaccard: f64,
    pub nmi: f64,
    pub latency_ms: f64,
    pub queries: Vec<QueryRecord>,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub runs: Vec<RunReport>,
    pub f1: MeanStd,
    pub jaccard: MeanStd,
    pub nmi: MeanStd,
    pub latency_ms: MeanStd,
}

impl EvalReport {
    fn from_runs(runs: Vec<RunReport>) -> Self {
        let col = |f: fn(&RunReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        EvalReport {
            f1: col(|r| r.f1),
            jaccard: col(|r| r.jaccard),
            nmi: col(|r| r.nmi),
            latency_ms: col(|r| r.latency_ms),
            runs,
        }
    }

    /// Descriptions of every threshold the aggregate misses.
    pub fn misses(&self, t: &Thresholds) -> Vec<String> {
        let mut out = Vec::new();
        let mut floor = |name: &str, want: Option<f64>, got: f64| {
            if let Some(w) = want {
                if got < w {
                    out.push(format!("{name} {got:.4} < {w}"));
                }
            }
        };
        floor("F1", t.f1, self.f1.mean);
        floor("Jaccard", t.jaccard, self.jaccard.mean);
        floor("NMI", t.nmi, self.nmi.mean);
        if let Some(w) = t.latency_ms {
            if self.latency_ms.mean > w {
                out.push(format!("latency {:.4} ms > {w} ms", self.latency_ms.mean));
            }
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::from("metric    mean     std\n");
        for (name, m) in [
            ("F1", self.f1),
            ("Jaccard", self.jaccard),
            ("NMI", self.nmi),
            ("ms/query", self.latency_ms),
        ] {
            s.push_str(&format!("{name:<9} {:.4}  {:.4}\n", m.mean, m.std));
        }
        s
    }
}

/// Answers every query against a fixed index and scores it.
pub fn evaluate_queries(
    index: &SearchIndex<'_>,
    workload: &[WorkloadQuery],
    gt: &GroundTruth,
    n: usize,
    k: usize,
) -> Result<Vec<QueryRecord>> {
    workload
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let start = Instant::now();
            let result = index.search(&w.query, k);
            let latency_us = start.elapsed().as_secs_f64() * 1e6;
            let result = result.map_err(|e| Error::InvalidArgument(format!("query {i}: {e}")))?;
            let truth = gt.community(w.truth);
            Ok(QueryRecord {
                query: w.query.nodes().to_vec(),
                truth: w.truth,
                f1: f1(&result.members, truth),
                jaccard: jaccard(&result.members, truth),
                nmi: nmi(&result.members, truth, n),
                members: result.members,
                latency_us,
            })
        })
        .collect()
}

/// Runs the full offline pipeline `cfg.eval.runs` times with per-run seeds
/// and evaluates the same workload after each.
pub fn run_benchmark(graph: &TemporalGraph, gt: &GroundTruth, cfg: &PipelineConfig) -> Result<EvalReport> {
    let n = graph.node_count();
    let e = &cfg.eval;
    let workload = generate_queries(gt, e.queries, e.query_size_min, e.query_size_max, cfg.seeds.eval)?;
    let mut runs = Vec::with_capacity(e.runs);
    for run in 0..e.runs {
        let seeds = cfg.seeds.for_run(run);
        let wrap = |err: Error| Error::InvalidArgument(format!("run {run}: {err}"));
        let detemporal = graph.detemporalize();
        let (partition, table) = match e.embedding {
            EmbeddingMode::Trained => {
                let t = run_pipeline(graph, cfg, &seeds).map_err(wrap)?;
                (t.partition, t.table)
            }
            EmbeddingMode::Oracle => (gt.as_partition(n), gt.oracle_embeddings(n)?),
        };
        let index = SearchIndex::new(&detemporal, &partition, &table)?;
        let queries = evaluate_queries(&index, &workload, gt, n, cfg.search.k).map_err(wrap)?;
        let mean = |f: fn(&QueryRecord) -> f64| queries.iter().map(f).sum::<f64>() / queries.len() as f64;
        let report = RunReport {
            run,
            seeds,
            f1: mean(|q| q.f1),
            jaccard: mean(|q| q.jaccard),
            nmi: mean(|q| q.nmi),
            latency_ms: mean(|q| q.latency_us) / 1000.0,
            queries,
        };
        log::info!(
            "run {run}: F1={:.4} JAC={:.4} NMI={:.4} {:.3} ms/query",
            report.f1,
            report.jaccard,
            report.nmi,
            report.latency_ms
        );
        runs.push(report);
    }
    Ok(EvalReport::from_runs(runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TemporalEdge;

    #[test]
    fn metric_examples() {
        assert_eq!(f1(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(f1(&[1], &[2]), 0.0);
        assert_eq!(f1(&[], &[2]), 0.0);
        assert!((f1(&[1, 2, 3], &[2, 3, 4]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[1], &[2]), 0.0);
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 1], &[0, 1], 5), 1.0);
        // pred splits both truth and non-truth in half
        assert!(nmi(&[0, 2], &[0, 1], 4).abs() < 1e-12);
        assert_eq!(nmi(&[0, 1, 2, 3], &[0, 1, 2, 3], 4), 1.0);
        assert_eq!(nmi(&[0, 1, 2, 3], &[0, 1], 4), 0.0);
    }

    fn graph() -> TemporalGraph {
        let edges = (0..9).map(|i| TemporalEdge::new(i, i + 1, i as u64)).collect();
        TemporalGraph::from_edges(10, edges).unwrap()
    }

    #[test]
    fn ground_truth_remaps_ids() {
        let g = TemporalGraph::from_reader("10 20 1\n20 30 2\n30 40 3\n".as_bytes()).unwrap();
        let gt = GroundTruth::from_reader("# comment\n10 20\n\n30,40\n".as_bytes(), &g).unwrap();
        assert_eq!(gt.communities(), &[vec![0, 1], vec![2, 3]]);
        assert!(matches!(
            GroundTruth::from_reader("10 99\n".as_bytes(), &g),
            Err(Error::UnknownNode(99))
        ));
    }

    #[test]
    fn single_member_queries() {
        let gt = GroundTruth::new(vec![vec![0, 1, 2], vec![3, 4], vec![5]]).unwrap();
        let w = generate_queries(&gt, 50, 1, 1, 7).unwrap();
        for q in &w {
            assert_eq!(q.query.len(), 1);
            assert!(gt.community(q.truth).contains(&q.query.nodes()[0]));
        }
        assert_eq!(w, generate_queries(&gt, 50, 1, 1, 7).unwrap());
    }

    #[test]
    fn small_communities_are_skipped() {
        let gt = GroundTruth::new(vec![vec![0], vec![1, 2, 3]]).unwrap();
        let w = generate_queries(&gt, 20, 2, 3, 1).unwrap();
        assert!(w.iter().all(|q| q.truth == 1 && q.query.len() >= 2));
        assert!(generate_queries(&gt, 1, 4, 5, 1).is_err());
    }

    #[test]
    fn oracle_mode_scores_perfectly() {
        let g = graph();
        let gt = GroundTruth::new(vec![vec![0, 1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.eval.runs = 1;
        cfg.eval.queries = 12;
        // a query covering its whole community would still take one outsider
        cfg.eval.query_size_max = 1;
        cfg.eval.embedding = EmbeddingMode::Oracle;
        let report = run_benchmark(&g, &gt, &cfg).unwrap();
        assert_eq!(report.f1.mean, 1.0);
        assert_eq!(report.jaccard.mean, 1.0);
        assert_eq!(report.nmi.mean, 1.0);
        assert_eq!(report.f1.std, 0.0);
        assert!(report.misses(&Thresholds { f1: Some(0.9), ..Default::default() }).is_empty());
        assert_eq!(report.misses(&Thresholds { latency_ms: Some(-1.0), ..Default::default() }).len(), 1);
    }

    #[test]
    fn mean_std_is_population() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
    }
}
