//! Temporal graph storage, the de-temporal (static) view, chronological edge
//! batches and the degree-biased negative sampler.
//!
//! Input files are plain text, one interaction per line as `u v t` with
//! whitespace- or comma-separated non-negative integers; `#` starts a comment.
//! Gzip-compressed files are detected by their magic bytes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One timestamped interaction. In a [`TemporalGraph`] the endpoints are
/// stored with `u < v`; inside an [`EdgeBatch`] `u` is the source of the
/// oriented event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemporalEdge {
    pub u: usize,
    pub v: usize,
    pub t: u64,
}

impl TemporalEdge {
    pub fn new(u: usize, v: usize, t: u64) -> Self {
        TemporalEdge { u, v, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HistoryEntry {
    node: usize,
    t: u64,
}

/// Undirected temporal multigraph with contiguous node ids.
///
/// Edges are sorted by timestamp, ties broken by `(u, v)`. Repeated pairs with
/// different timestamps are distinct edges.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    node_count: usize,
    edges: Vec<TemporalEdge>,
    t_max: u64,
    original_ids: Vec<u64>,
    // per-node interaction history in stream order, CSR layout
    history_offsets: Vec<usize>,
    history: Vec<HistoryEntry>,
}

impl TemporalGraph {
    /// Builds a graph over nodes `0..node_count` whose original ids are the
    /// indices themselves.
    pub fn from_edges(node_count: usize, edges: Vec<TemporalEdge>) -> Result<Self> {
        let ids = (0..node_count as u64).collect();
        Self::with_original_ids(ids, edges)
    }

    /// `original_ids[i]` is the external id of node `i`; it must be strictly
    /// increasing so lookups can binary-search it.
    pub fn with_original_ids(original_ids: Vec<u64>, mut edges: Vec<TemporalEdge>) -> Result<Self> {
        if original_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "original node ids must be strictly increasing".into(),
            ));
        }
        let node_count = original_ids.len();
        for (i, e) in edges.iter_mut().enumerate() {
            if e.u >= node_count || e.v >= node_count {
                return Err(Error::InvalidArgument(format!(
                    "edge {i} ({}, {}) has an endpoint outside 0..{node_count}",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::SelfLoop {
                    line: i + 1,
                    node: original_ids[e.u],
                });
            }
            if e.u > e.v {
                std::mem::swap(&mut e.u, &mut e.v);
            }
        }
        edges.sort_unstable_by_key(|e| (e.t, e.u, e.v));
        let t_max = edges.iter().map(|e| e.t).max().unwrap_or(0);

        let mut degree = vec![0usize; node_count];
        for e in &edges {
            degree[e.u] += 1;
            degree[e.v] += 1;
        }
        let mut history_offsets = Vec::with_capacity(node_count + 1);
        history_offsets.push(0);
        for d in &degree {
            history_offsets.push(history_offsets.last().unwrap() + d);
        }
        let mut cursor = history_offsets[..node_count].to_vec();
        let mut history = vec![HistoryEntry { node: 0, t: 0 }; history_offsets[node_count]];
        for e in &edges {
            history[cursor[e.u]] = HistoryEntry { node: e.v, t: e.t };
            cursor[e.u] += 1;
            history[cursor[e.v]] = HistoryEntry { node: e.u, t: e.t };
            cursor[e.v] += 1;
        }

        Ok(TemporalGraph {
            node_count,
            edges,
            t_max,
            original_ids,
            history_offsets,
            history,
        })
    }

    /// Loads an edge-list file, transparently decompressing gzip input.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 2];
        let read = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        if read == 2 && magic == [0x1f, 0x8b] {
            Self::from_reader(BufReader::new(GzDecoder::new(file)))
        } else {
            Self::from_reader(BufReader::new(file))
        }
    }

    /// Parses `u v t` lines. Node ids are remapped to `0..n` in ascending order
    /// of their original value.
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut raw: Vec<(u64, u64, u64)> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected `u v t`, found {} fields", fields.len()),
                });
            }
            let parse_id = |s: &str| {
                s.parse::<u64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("invalid node id `{s}`"),
                })
            };
            let u = parse_id(fields[0])?;
            let v = parse_id(fields[1])?;
            let t: i64 = fields[2].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid timestamp `{}`", fields[2]),
            })?;
            if t < 0 {
                return Err(Error::NegativeTimestamp {
                    line: lineno,
                    timestamp: t,
                });
            }
            if u == v {
                return Err(Error::SelfLoop { line: lineno, node: u });
            }
            raw.push((u, v, t as u64));
        }

        let mut ids: Vec<u64> = raw.iter().flat_map(|&(u, v, _)| [u, v]).collect();
        ids.sort_unstable();
        ids.dedup();
        let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let edges = raw
            .into_iter()
            .map(|(u, v, t)| TemporalEdge::new(index[&u], index[&v], t))
            .collect();
        Self::with_original_ids(ids, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[TemporalEdge] {
        &self.edges
    }

    pub fn t_max(&self) -> u64 {
        self.t_max
    }

    pub fn original_ids(&self) -> &[u64] {
        &self.original_ids
    }

    pub fn original_id(&self, node: usize) -> u64 {
        self.original_ids[node]
    }

    /// Maps an external node id back to its contiguous index.
    pub fn node_index(&self, original: u64) -> Option<usize> {
        self.original_ids.binary_search(&original).ok()
    }

    /// Number of distinct timestamps.
    pub fn distinct_timestamps(&self) -> usize {
        let mut count = 0;
        let mut last = None;
        for e in &self.edges {
            if last != Some(e.t) {
                count += 1;
                last = Some(e.t);
            }
        }
        count
    }

    /// Timestamp scaled into `[0, 1]` by `t_max`.
    #[inline]
    pub fn normalized_time(&self, t: u64) -> f64 {
        if self.t_max == 0 {
            0.0
        } else {
            t as f64 / self.t_max as f64
        }
    }

    /// The `h` most recent interactions of `u` strictly before `t`, newest
    /// first. Equal timestamps are returned in reverse stream order.
    pub fn temporal_neighbors(&self, u: usize, t: u64, h: usize) -> Vec<(usize, u64)> {
        let hist = &self.history[self.history_offsets[u]..self.history_offsets[u + 1]];
        let end = hist.partition_point(|e| e.t < t);
        hist[..end]
            .iter()
            .rev()
            .take(h)
            .map(|e| (e.node, e.t))
            .collect()
    }

    /// The chronological stream with each interaction emitted once per
    /// orientation: `(u, v, t)` followed by `(v, u, t)`.
    pub fn oriented_events(&self) -> Vec<TemporalEdge> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for e in &self.edges {
            out.push(TemporalEdge::new(e.u, e.v, e.t));
            out.push(TemporalEdge::new(e.v, e.u, e.t));
        }
        out
    }

    /// Consecutive chunks of the oriented stream, `batch_size` events each
    /// (the last batch may be shorter).
    pub fn edge_batches(&self, batch_size: usize) -> Result<Vec<EdgeBatch>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(self
            .oriented_events()
            .chunks(batch_size)
            .enumerate()
            .map(|(index, chunk)| EdgeBatch {
                index,
                events: chunk.to_vec(),
            })
            .collect())
    }

    /// Drops timestamps and merges repeated pairs.
    pub fn detemporalize(&self) -> DeTemporalGraph {
        DeTemporalGraph::from_pairs(self.node_count, self.edges.iter().map(|e| (e.u, e.v)))
    }

    /// Writes `original_id index` pairs, one per line.
    pub fn write_node_map(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, id) in self.original_ids.iter().enumerate() {
            writeln!(out, "{id} {i}")?;
        }
        Ok(())
    }

    /// Canonical binary encoding: magic, version, `n`, `m`, the `n` original
    /// ids, then `m` edges as `(u: u64, v: u64, t: u64)`; little endian.
    pub fn write_binary(&self, out: impl Write) -> std::io::Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(GRAPH_MAGIC)?;
        out.write_all(&GRAPH_VERSION.to_le_bytes())?;
        out.write_all(&(self.node_count as u64).to_le_bytes())?;
        out.write_all(&(self.edges.len() as u64).to_le_bytes())?;
        for id in &self.original_ids {
            out.write_all(&id.to_le_bytes())?;
        }
        for e in &self.edges {
            out.write_all(&(e.u as u64).to_le_bytes())?;
            out.write_all(&(e.v as u64).to_le_bytes())?;
            out.write_all(&e.t.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut cur = ByteCursor::new(&bytes);
        if cur.take(GRAPH_MAGIC.len())? != GRAPH_MAGIC {
            return Err(Error::Format("not a temporal graph file".into()));
        }
        let version = cur.u32()?;
        if version != GRAPH_VERSION {
            return Err(Error::Format(format!("unsupported graph version {version}")));
        }
        let n = cur.u64()? as usize;
        let m = cur.u64()? as usize;
        let ids = (0..n).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let u = cur.u64()? as usize;
            let v = cur.u64()? as usize;
            let t = cur.u64()?;
            edges.push(TemporalEdge::new(u, v, t));
        }
        if !cur.is_empty() {
            return Err(Error::Format("trailing bytes after graph".into()));
        }
        Self::with_original_ids(ids, edges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(file).map_err(|e| Error::io(path, e))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(BufReader::new(file))
    }
}

const GRAPH_MAGIC: &[u8; 8] = b"UTCSTGR\0";
const GRAPH_VERSION: u32 = 1;

pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// A chronological slice of the oriented event stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeBatch {
    pub index: usize,
    pub events: Vec<TemporalEdge>,
}

impl EdgeBatch {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Static simple graph obtained by discarding timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeTemporalGraph {
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
}

impl DeTemporalGraph {
    /// Builds the graph from undirected pairs; duplicates are merged and
    /// self-loops dropped.
    pub fn from_pairs(node_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); node_count];
        for (u, v) in pairs {
            if u == v {
                continue;
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let mut twice = 0;
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
            twice += list.len();
        }
        DeTemporalGraph {
            adjacency,
            edge_count: twice / 2,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in lexicographic
    /// order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn write_edge_list(&self, mut out: impl Write) -> std::io::Result<()> {
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }
}

/// Draws nodes with probability proportional to `degree^(3/4)`.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    pub fn from_degrees(g: &DeTemporalGraph, seed: u64) -> Result<Self> {
        let weights: Vec<f64> = (0..g.node_count())
            .map(|v| (g.degree(v) as f64).powf(0.75))
            .collect();
        Self::from_weights(&weights, seed)
    }

    /// Sampler over arbitrary non-negative weights.
    pub fn from_weights(weights: &[f64], seed: u64) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid sampling weight {w}")));
            }
            acc += w;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::AllIsolated);
        }
        Ok(NegativeSampler {
            cumulative,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn node_count(&self) -> usize {
        self.cumulative.len()
    }

    pub fn probability(&self, v: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let prev = if v == 0 { 0.0 } else { self.cumulative[v - 1] };
        (self.cumulative[v] - prev) / total
    }

    pub fn sample(&mut self) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = self.rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= x);
        // x < total, so idx < len unless rounding pushed x onto the last edge
        idx.min(self.cumulative.len() - 1)
    }

    /// Redraws while the sample is in `excluded`; gives up after `retries`
    /// attempts.
    pub fn sample_excluding(&mut self, excluded: &[usize], retries: usize) -> Option<usize> {
        for _ in 0..retries {
            let v = self.sample();
            if !excluded.contains(&v) {
                return Some(v);
            }
        }
        None
    }
}
