//! Batch-level refinement: a temperature-scaled cosine contrastive loss that
//! pulls a source towards its recent neighbors and the current target, and
//! away from sampled non-neighbors.

use crate::embedding::EmbeddingTable;
use crate::grad::SparseGrad;
use crate::linalg::{add_cosine_grad, cosine};

/// Contrastive loss of one event, averaged over its positives.
///
/// For each positive `p` the term is
/// `−log(e^{cos(u,p)/T} / (e^{cos(u,p)/T} + Σ_n e^{cos(u,n)/T}))`.
/// When `grad` is given, `scale` times the gradient is accumulated.
pub fn contrastive_event_loss(
    source: usize,
    positives: &[usize],
    negatives: &[usize],
    temperature: f64,
    table: &EmbeddingTable,
    mut grad: Option<(&mut SparseGrad, f64)>,
) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    let zu = table.vector(source);
    let neg_logits: Vec<f64> = negatives
        .iter()
        .map(|&n| cosine(zu, table.vector(n)) / temperature)
        .collect();
    let inv_pos = 1.0 / positives.len() as f64;
    // ∂/∂logit_n summed over positives; applied once per negative
    let mut neg_coef = vec![0.0; negatives.len()];
    let mut total = 0.0;
    for &p in positives {
        let zp = table.vector(p);
        let pos_logit = cosine(zu, zp) / temperature;
        let max = neg_logits.iter().copied().fold(pos_logit, f64::max);
        let pos_exp = (pos_logit - max).exp();
        let neg_exps: Vec<f64> = neg_logits.iter().map(|&l| (l - max).exp()).collect();
        let denom = pos_exp + neg_exps.iter().sum::<f64>();
        total += -(pos_logit - max) + denom.ln();

        if let Some((g, scale)) = grad.as_mut() {
            let s = *scale * inv_pos / temperature;
            // ∂/∂logit_p = π_p − 1, ∂/∂logit_n = π_n
            let dp = s * (pos_exp / denom - 1.0);
            add_cosine_grad(g.row_mut(source), dp, zu, zp);
            add_cosine_grad(g.row_mut(p), dp, zp, zu);
            for (c, e) in neg_coef.iter_mut().zip(&neg_exps) {
                *c += s * (e / denom);
            }
        }
    }
    if let Some((g, _)) = grad {
        for (&n, &dn) in negatives.iter().zip(&neg_coef) {
            let zn = table.vector(n);
            add_cosine_grad(g.row_mut(source), dn, zu, zn);
            add_cosine_grad(g.row_mut(n), dn, zn, zu);
        }
    }
    total * inv_pos
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn direct_substitution() {
        // cos(u, p) = 1, cos(u, n) = −1, T = 0.5
        let t = EmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![-3.0, 0.0]]).unwrap();
        let l = contrastive_event_loss(0, &[1], &[2], 0.5, &t, None);
        let e2 = 2f64.exp();
        let expected = -(e2 / (e2 + (-2f64).exp())).ln();
        assert!((l - expected).abs() < 1e-14);
    }

    #[test]
    fn no_negatives_is_zero_loss() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 0.3], vec![0.2, 0.0]]).unwrap();
        assert_eq!(contrastive_event_loss(0, &[1], &[], 0.5, &t, None), 0.0);
    }

    #[test]
    fn zero_vector_counts_as_orthogonal() {
        let t = EmbeddingTable::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let l = contrastive_event_loss(0, &[1], &[2], 0.5, &t, None);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let mut g = SparseGrad::new(2);
        contrastive_event_loss(0, &[1], &[2], 0.5, &t, Some((&mut g, 1.0)));
        assert!(g.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let t = EmbeddingTable::from_rows(&rows).unwrap();
        let positives = [1, 2, 2, 3];
        let negatives = [4, 5, 6];
        let mut g = SparseGrad::new(5);
        contrastive_event_loss(0, &positives, &negatives, 0.5, &t, Some((&mut g, 1.0)));
        let loss = |t: &EmbeddingTable| contrastive_event_loss(0, &positives, &negatives, 0.5, t, None);
        let h = 1e-6;
        for v in 0..8 {
            for k in 0..5 {
                let mut p = t.clone();
                p.vector_mut(v)[k] += h;
                let mut m = t.clone();
                m.vector_mut(v)[k] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = g.row(v)[k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-7), "{v},{k}: {fd} vs {an}");
            }
        }
    }
}
