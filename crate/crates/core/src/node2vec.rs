//! node2vec initialization: biased second-order walks on the de-temporal
//! graph followed by skip-gram training with negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::grad::SparseGrad;
use crate::graph::{DeTemporalGraph, NegativeSampler};
use crate::linalg::{axpy, dot, neg_log_sigmoid, sigmoid};

/// Attempts to draw a negative that differs from the center and context.
const NEGATIVE_RETRIES: usize = 100;
const SAMPLER_SALT: u64 = 0x6e32_7665_635f_6e65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    /// return parameter
    pub p: f64,
    /// in-out parameter
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 1.0,
            walk_length: 20,
            walks_per_node: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 128,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<usize>>,
    pub walk_length: usize,
    pub walks_per_node: usize,
}

/// Unnormalized transition weights from `cur` to each of its neighbors, given
/// the previous node of the walk (`None` on the first step).
pub fn transition_weights(
    g: &DeTemporalGraph,
    prev: Option<usize>,
    cur: usize,
    p: f64,
    q: f64,
) -> Vec<f64> {
    g.neighbors(cur)
        .iter()
        .map(|&x| match prev {
            None => 1.0,
            Some(prev) if x == prev => 1.0 / p,
            Some(prev) if g.has_edge(prev, x) => 1.0,
            Some(_) => 1.0 / q,
        })
        .collect()
}

fn walk_seed(seed: u64, round: usize, start: usize) -> u64 {
    // splitmix64 over a combined counter
    let mut z = seed
        .wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((start as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn single_walk(g: &DeTemporalGraph, cfg: &WalkConfig, start: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut walk = Vec::with_capacity(cfg.walk_length);
    walk.push(start);
    if g.degree(start) == 0 {
        return walk;
    }
    let mut weights = Vec::new();
    while walk.len() < cfg.walk_length {
        let cur = *walk.last().unwrap();
        let prev = if walk.len() >= 2 { Some(walk[walk.len() - 2]) } else { None };
        weights.clear();
        weights.extend(transition_weights(g, prev, cur, cfg.p, cfg.q));
        let total: f64 = weights.iter().sum();
        let mut x = rng.gen::<f64>() * total;
        let nbrs = g.neighbors(cur);
        let mut next = nbrs[nbrs.len() - 1];
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                next = nbrs[i];
                break;
            }
            x -= w;
        }
        walk.push(next);
    }
    walk
}

/// `walks_per_node` biased walks from every node. Each walk has its own
/// seed derived from `(seed, round, start)`, so output does not depend on the
/// thread count.
pub fn generate_walks(g: &DeTemporalGraph, cfg: &WalkConfig, seed: u64) -> Result<WalkCorpus> {
    if cfg.walk_length < 2 {
        return Err(Error::InvalidArgument("walk length must be at least 2".into()));
    }
    if cfg.walks_per_node < 1 {
        return Err(Error::InvalidArgument("walks per node must be at least 1".into()));
    }
    if !(cfg.p > 0.0 && cfg.q > 0.0) {
        return Err(Error::InvalidArgument("p and q must be positive".into()));
    }
    let n = g.node_count();
    let walks = (0..cfg.walks_per_node * n)
        .into_par_iter()
        .map(|i| {
            let (round, start) = (i / n, i % n);
            let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(seed, round, start));
            single_walk(g, cfg, start, &mut rng)
        })
        .collect();
    Ok(WalkCorpus {
        walks,
        walk_length: cfg.walk_length,
        walks_per_node: cfg.walks_per_node,
    })
}

/// Skip-gram loss for one (center, context) pair over a single shared table:
/// `−log σ(z_c·z_o) − Σ_k log σ(−z_c·z_k)`.
pub fn sgns_pair_loss(table: &EmbeddingTable, center: usize, context: usize, negatives: &[usize]) -> f64 {
    let zc = table.vector(center);
    let mut loss = neg_log_sigmoid(dot(zc, table.vector(context)));
    for &k in negatives {
        loss += neg_log_sigmoid(-dot(zc, table.vector(k)));
    }
    loss
}

/// Gradient of [`sgns_pair_loss`], accumulated into `grad`.
pub fn sgns_pair_grad(
    table: &EmbeddingTable,
    center: usize,
    context: usize,
    negatives: &[usize],
    grad: &mut SparseGrad,
) {
    let zc = table.vector(center);
    let zo = table.vector(context);
    let coef = sigmoid(dot(zc, zo)) - 1.0;
    axpy(grad.row_mut(center), coef, zo);
    axpy(grad.row_mut(context), coef, zc);
    for &k in negatives {
        let zk = table.vector(k);
        let coef = sigmoid(dot(zc, zk));
        axpy(grad.row_mut(center), coef, zk);
        axpy(grad.row_mut(k), coef, zc);
    }
}

/// Trains skip-gram embeddings on `corpus`, starting from
/// [`EmbeddingTable::random`] with the same seed. Negatives follow the
/// degree^(3/4) law of `g`. Single-threaded and deterministic.
pub fn train_init(
    corpus: &WalkCorpus,
    g: &DeTemporalGraph,
    cfg: &SgnsConfig,
    seed: u64,
) -> Result<EmbeddingTable> {
    if cfg.dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
    }
    if corpus.walks.is_empty() {
        return Err(Error::InvalidArgument("walk corpus is empty".into()));
    }
    let mut table = EmbeddingTable::random(g.node_count(), cfg.dim, seed)?;
    if cfg.epochs == 0 || g.edge_count() == 0 {
        return Ok(table);
    }
    let mut sampler = NegativeSampler::from_degrees(g, seed ^ SAMPLER_SALT)?;
    let mut grad = SparseGrad::new(cfg.dim);
    let mut negatives = Vec::with_capacity(cfg.negatives);

    for _ in 0..cfg.epochs {
        for walk in &corpus.walks {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(walk.len());
                for (j, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i || context == center {
                        continue;
                    }
                    negatives.clear();
                    for _ in 0..cfg.negatives {
                        if let Some(k) = sampler.sample_excluding(&[center, context], NEGATIVE_RETRIES) {
                            negatives.push(k);
                        }
                    }
                    grad.clear();
                    sgns_pair_grad(&table, center, context, &negatives, &mut grad);
                    grad.apply(&mut table, cfg.learning_rate);
                }
            }
        }
    }
    if !table.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            batch: 0,
            detail: "node2vec initialization diverged".into(),
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine;

    fn path3() -> DeTemporalGraph {
        DeTemporalGraph::from_pairs(3, [(0, 1), (1, 2)])
    }

    fn two_cliques(size: usize) -> DeTemporalGraph {
        let mut pairs = Vec::new();
        for base in [0, size] {
            for u in 0..size {
                for v in u + 1..size {
                    pairs.push((base + u, base + v));
                }
            }
        }
        DeTemporalGraph::from_pairs(2 * size, pairs)
    }

    fn assert_valid(g: &DeTemporalGraph, corpus: &WalkCorpus) {
        for walk in &corpus.walks {
            for pair in walk.windows(2) {
                assert!(g.has_edge(pair[0], pair[1]), "{pair:?}");
            }
        }
    }

    #[test]
    fn walks_are_valid_and_complete() {
        let g = two_cliques(4);
        let cfg = WalkConfig { p: 0.5, q: 2.0, ..WalkConfig::default() };
        let corpus = generate_walks(&g, &cfg, 9).unwrap();
        assert_eq!(corpus.walks.len(), 8 * cfg.walks_per_node);
        assert!(corpus.walks.iter().all(|w| w.len() == cfg.walk_length));
        assert_valid(&g, &corpus);
        assert_eq!(corpus, generate_walks(&g, &cfg, 9).unwrap());
    }

    #[test]
    fn isolated_nodes_give_length_one_walks() {
        let g = DeTemporalGraph::from_pairs(3, [(0, 1)]);
        let corpus = generate_walks(&g, &WalkConfig::default(), 0).unwrap();
        assert!(corpus.walks.iter().filter(|w| w[0] == 2).all(|w| w == &vec![2]));
    }

    #[test]
    fn rejects_bad_walk_parameters() {
        let g = path3();
        let short = WalkConfig { walk_length: 1, ..WalkConfig::default() };
        assert!(generate_walks(&g, &short, 0).is_err());
        let none = WalkConfig { walks_per_node: 0, ..WalkConfig::default() };
        assert!(generate_walks(&g, &none, 0).is_err());
    }

    #[test]
    fn unbiased_weights_are_uniform() {
        let g = path3();
        assert_eq!(transition_weights(&g, Some(0), 1, 1.0, 1.0), vec![1.0, 1.0]);
        assert_eq!(transition_weights(&g, None, 1, 0.3, 7.0), vec![1.0, 1.0]);
    }

    #[test]
    fn triangle_never_uses_outward_weight() {
        let tri = DeTemporalGraph::from_pairs(3, [(0, 1), (1, 2), (0, 2)]);
        // from 1 having come from 0: back to 0 (1/p) or to 2, adjacent to 0 (1)
        let w = transition_weights(&tri, Some(0), 1, 1.0, 1e12);
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn return_bias_matches_closed_form() {
        // path 0-1-2 walking 0 -> 1: return weight 1/p = 4, forward 1/q = 1
        let g = path3();
        let w = transition_weights(&g, Some(0), 1, 0.25, 1.0);
        assert_eq!(w, vec![4.0, 1.0]);

        let cfg = WalkConfig { p: 0.25, q: 1.0, walk_length: 3, walks_per_node: 1 };
        let mut back = 0usize;
        let mut forward = 0usize;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200_000 {
            let walk = single_walk(&g, &cfg, 0, &mut rng);
            match walk[2] {
                0 => back += 1,
                2 => forward += 1,
                other => panic!("{other}"),
            }
        }
        let ratio = back as f64 / forward as f64;
        assert!((ratio - 4.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn sgns_gradient_matches_finite_differences() {
        let table = EmbeddingTable::from_rows(&[
            vec![0.3, -0.2, 0.5],
            vec![-0.1, 0.4, 0.2],
            vec![0.6, 0.1, -0.3],
            vec![-0.4, -0.5, 0.1],
        ])
        .unwrap();
        let negatives = [2, 3, 2];
        let mut grad = SparseGrad::new(3);
        sgns_pair_grad(&table, 0, 1, &negatives, &mut grad);
        let h = 1e-6;
        for v in 0..4 {
            for k in 0..3 {
                let mut plus = table.clone();
                plus.vector_mut(v)[k] += h;
                let mut minus = table.clone();
                minus.vector_mut(v)[k] -= h;
                let fd = (sgns_pair_loss(&plus, 0, 1, &negatives)
                    - sgns_pair_loss(&minus, 0, 1, &negatives))
                    / (2.0 * h);
                let an = grad.row(v)[k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-8), "{v},{k}");
            }
        }
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let g = path3();
        let corpus = generate_walks(&g, &WalkConfig::default(), 1).unwrap();
        let cfg = SgnsConfig { dim: 4, epochs: 0, ..SgnsConfig::default() };
        let table = train_init(&corpus, &g, &cfg, 5).unwrap();
        assert_eq!(table, EmbeddingTable::random(3, 4, 5).unwrap());
        let bad = SgnsConfig { dim: 0, ..cfg };
        assert!(train_init(&corpus, &g, &bad, 5).is_err());
    }

    #[test]
    fn single_edge_is_pulled_together() {
        let g = DeTemporalGraph::from_pairs(2, [(0, 1)]);
        let corpus = generate_walks(&g, &WalkConfig::default(), 3).unwrap();
        let cfg = SgnsConfig { dim: 8, epochs: 20, ..SgnsConfig::default() };
        let table = train_init(&corpus, &g, &cfg, 3).unwrap();
        assert!(sigmoid(dot(table.vector(0), table.vector(1))) > 0.9);
    }

    #[test]
    fn disjoint_cliques_separate() {
        let g = two_cliques(6);
        let corpus = generate_walks(&g, &WalkConfig::default(), 2).unwrap();
        let cfg = SgnsConfig { dim: 16, epochs: 5, ..SgnsConfig::default() };
        let table = train_init(&corpus, &g, &cfg, 2).unwrap();
        let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0, 0.0, 0);
        for u in 0..12 {
            for v in u + 1..12 {
                let c = cosine(table.vector(u), table.vector(v));
                if (u < 6) == (v < 6) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    ne += 1;
                }
            }
        }
        assert!(intra / ni as f64 > inter / ne as f64);
    }

    #[test]
    fn training_is_deterministic() {
        let g = two_cliques(4);
        let corpus = generate_walks(&g, &WalkConfig::default(), 8).unwrap();
        let cfg = SgnsConfig { dim: 8, epochs: 2, ..SgnsConfig::default() };
        assert_eq!(
            train_init(&corpus, &g, &cfg, 8).unwrap(),
            train_init(&corpus, &g, &cfg, 8).unwrap()
        );
    }
}
