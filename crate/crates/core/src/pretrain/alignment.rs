//! Node-to-subgraph alignment: Student's-t soft assignment against subgraph
//! centroids, the sharpened target distribution, and the KL loss between
//! them.

use crate::embedding::EmbeddingTable;
use crate::grad::GradAccumulator;
use crate::leiden::Partition;
use crate::linalg::{axpy, axpy_diff, sq_dist, Matrix};

/// Floor applied to assignment probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean member embedding of every subgraph, one row per subgraph id.
pub fn compute_centroids(table: &EmbeddingTable, partition: &Partition) -> Matrix {
    let mut c = Matrix::zeros(partition.subgraph_count(), table.dim());
    for (i, members) in partition.all_members().iter().enumerate() {
        let row = c.row_mut(i);
        for &v in members {
            axpy(row, 1.0, table.vector(v));
        }
        let inv = 1.0 / members.len() as f64;
        row.iter_mut().for_each(|x| *x *= inv);
    }
    c
}

/// Student's-t kernel weights `(1 + ‖z − μ_i‖²)⁻¹` normalized over `i`.
pub fn soft_assignment_row(z: &[f64], centroids: &Matrix, out: &mut [f64]) {
    let mut total = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        *o = 1.0 / (1.0 + sq_dist(z, centroids.row(i)));
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Soft assignment of every node, `n × K`.
pub fn soft_assignment(table: &EmbeddingTable, centroids: &Matrix) -> Matrix {
    let k = centroids.rows();
    let mut q = Matrix::zeros(table.node_count(), k);
    for v in 0..table.node_count() {
        soft_assignment_row(table.vector(v), centroids, q.row_mut(v));
    }
    q
}

/// Squares each assignment, divides by the subgraph's total soft frequency
/// and renormalizes per row.
pub fn target_distribution(q: &Matrix) -> Matrix {
    let k = q.cols();
    let mut freq = vec![0.0; k];
    for v in 0..q.rows() {
        for (f, x) in freq.iter_mut().zip(q.row(v)) {
            *f += x;
        }
    }
    let mut p = Matrix::zeros(q.rows(), k);
    for v in 0..q.rows() {
        let row = p.row_mut(v);
        let mut total = 0.0;
        for i in 0..k {
            let x = if freq[i] > 0.0 { q.get(v, i).powi(2) / freq[i] } else { 0.0 };
            row[i] = x;
            total += x;
        }
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            row.iter_mut().for_each(|x| *x = 1.0 / k as f64);
        }
    }
    p
}

/// `Σ_i p_i log(p_i / q_i)` with `q_i` floored at [`PROB_FLOOR`].
pub fn kl_row(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(PROB_FLOOR)).ln())
        .sum()
}

/// Mean KL divergence between the fixed target rows of `target` and the live
/// assignment of the nodes in `rows` against `centroids`.
///
/// When `grad` is given, `scale` times the gradient with respect to the node
/// embeddings and (if the accumulator carries a centroid buffer) the
/// centroids is accumulated. The target is held constant.
pub fn alignment_loss(
    target: &Matrix,
    table: &EmbeddingTable,
    centroids: &Matrix,
    rows: &[usize],
    mut grad: Option<(&mut GradAccumulator, f64)>,
) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let k = centroids.rows();
    let inv_rows = 1.0 / rows.len() as f64;
    let mut q = vec![0.0; k];
    let mut kernel = vec![0.0; k];
    let mut coef = vec![0.0; k];
    let mut loss = 0.0;
    for &v in rows {
        let z = table.vector(v);
        let mut total = 0.0;
        for i in 0..k {
            kernel[i] = 1.0 / (1.0 + sq_dist(z, centroids.row(i)));
            total += kernel[i];
        }
        for i in 0..k {
            q[i] = kernel[i] / total;
        }
        let p = target.row(v);
        loss += kl_row(p, &q);

        if let Some((acc, scale)) = grad.as_mut() {
            // c_i = q_i ∂L/∂q_i, zero where the floor is active
            let mut c_sum = 0.0;
            for i in 0..k {
                coef[i] = if q[i] > PROB_FLOOR { -p[i] } else { 0.0 };
                c_sum += coef[i];
            }
            let s = *scale * inv_rows;
            for i in 0..k {
                // ∂ log w_i / ∂z = −2 w_i (z − μ_i)
                let g = s * (coef[i] - c_sum * q[i]) * 2.0 * kernel[i];
                axpy_diff(acc.row_mut(v), -g, z, centroids.row(i));
                if let Some(cg) = acc.centroids.as_mut() {
                    axpy_diff(cg.row_mut(i), g, z, centroids.row(i));
                }
            }
        }
    }
    loss * inv_rows
}
