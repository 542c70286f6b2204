#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use utcs_core::eval::GroundTruth;
use utcs_core::{TemporalEdge, TemporalGraph};

/// `groups` blocks of `size` nodes. Each time step emits `per_step`
/// contacts; a contact stays inside a block with probability `1 − noise`.
pub fn planted(groups: usize, size: usize, steps: u64, per_step: usize, noise: f64, seed: u64) -> (TemporalGraph, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = groups * size;
    let mut edges = Vec::new();
    for t in 0..steps {
        for _ in 0..per_step {
            let u = rng.gen_range(0..n);
            let v = if rng.gen_bool(noise) {
                rng.gen_range(0..n)
            } else {
                (u / size) * size + rng.gen_range(0..size)
            };
            if u != v {
                edges.push(TemporalEdge::new(u, v, t));
            }
        }
    }
    let g = TemporalGraph::from_edges(n, edges).unwrap();
    let gt = GroundTruth::new((0..groups).map(|b| (b * size..(b + 1) * size).collect()).collect()).unwrap();
    (g, gt)
}

/// Two blocks of `size` nodes in which every intra-block pair interacts at
/// each of `steps` time steps with probability `p`.
pub fn temporal_cliques(size: usize, steps: u64, p: f64, seed: u64) -> TemporalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for t in 0..steps {
        for base in [0, size] {
            for a in 0..size {
                for b in a + 1..size {
                    if rng.gen_bool(p) {
                        edges.push(TemporalEdge::new(base + a, base + b, t));
                    }
                }
            }
        }
    }
    TemporalGraph::from_edges(2 * size, edges).unwrap()
}
