//! Hawkes-style conditional intensity and the temporal loss.
//!
//! The intensity of `x` joining the neighborhood of source `u` at time `t` is
//!
//! ```text
//! λ(u, x, t) = −‖z_u − z_x‖² + Σ_j α_j · (−‖z_{h_j} − z_x‖²) · exp(−δ_u (t − t_j))
//! α = softmax_j(−‖z_u − z_{h_j}‖²)
//! ```
//!
//! over the recent history `(h_j, t_j)` of `u`, with times normalized to
//! `[0, 1]`.

use crate::embedding::EmbeddingTable;
use crate::grad::SparseGrad;
use crate::linalg::{axpy_diff, neg_log_sigmoid, sigmoid, sq_dist};

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityContext {
    pub source: usize,
    pub target: usize,
    /// normalized event time
    pub time: f64,
    /// `(neighbor, normalized time)`, every time strictly before `time`
    pub history: Vec<(usize, f64)>,
}

impl IntensityContext {
    pub fn with_target(&self, target: usize) -> Self {
        IntensityContext {
            target,
            ..self.clone()
        }
    }
}

struct Forward {
    lambda: f64,
    alpha: Vec<f64>,
    affinity: Vec<f64>,
    kernel: Vec<f64>,
    excitation: f64,
}

/// Softmax attention of the source over its history; sums to 1 when the
/// history is non-empty.
pub fn attention(ctx: &IntensityContext, table: &EmbeddingTable) -> Vec<f64> {
    let zu = table.vector(ctx.source);
    let logits: Vec<f64> = ctx
        .history
        .iter()
        .map(|&(h, _)| -sq_dist(zu, table.vector(h)))
        .collect();
    softmax(&logits)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&a| (a - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn forward(ctx: &IntensityContext, table: &EmbeddingTable) -> Forward {
    forward_with(ctx, table, attention(ctx, table))
}

/// Forward pass reusing attention weights, which do not depend on the target.
fn forward_with(ctx: &IntensityContext, table: &EmbeddingTable, alpha: Vec<f64>) -> Forward {
    let zu = table.vector(ctx.source);
    let zx = table.vector(ctx.target);
    let base = -sq_dist(zu, zx);
    let delta = table.decay(ctx.source);
    let mut affinity = Vec::with_capacity(ctx.history.len());
    let mut kernel = Vec::with_capacity(ctx.history.len());
    let mut excitation = 0.0;
    for (j, &(h, tj)) in ctx.history.iter().enumerate() {
        let a = -sq_dist(table.vector(h), zx);
        let k = (-delta * (ctx.time - tj)).exp();
        excitation += alpha[j] * a * k;
        affinity.push(a);
        kernel.push(k);
    }
    Forward {
        lambda: base + excitation,
        alpha,
        affinity,
        kernel,
        excitation,
    }
}

pub fn intensity(ctx: &IntensityContext, table: &EmbeddingTable) -> f64 {
    forward(ctx, table).lambda
}

/// Adds `upstream · ∂λ/∂θ` for every embedding row and the source decay.
fn backward(ctx: &IntensityContext, table: &EmbeddingTable, fw: &Forward, upstream: f64, grad: &mut SparseGrad) {
    let u = ctx.source;
    let x = ctx.target;
    let zu = table.vector(u);
    let zx = table.vector(x);

    // base rate −‖z_u − z_x‖²
    axpy_diff(grad.row_mut(u), -2.0 * upstream, zu, zx);
    axpy_diff(grad.row_mut(x), 2.0 * upstream, zu, zx);

    let mut decay_grad = 0.0;
    for (j, &(h, tj)) in ctx.history.iter().enumerate() {
        let zh = table.vector(h);
        let weight = fw.alpha[j] * fw.kernel[j];
        // affinity −‖z_h − z_x‖²
        axpy_diff(grad.row_mut(x), 2.0 * upstream * weight, zh, zx);
        axpy_diff(grad.row_mut(h), -2.0 * upstream * weight, zh, zx);
        // attention logit −‖z_u − z_h‖² through the softmax
        let logit_grad = upstream * fw.alpha[j] * (fw.affinity[j] * fw.kernel[j] - fw.excitation);
        axpy_diff(grad.row_mut(u), -2.0 * logit_grad, zu, zh);
        axpy_diff(grad.row_mut(h), 2.0 * logit_grad, zu, zh);
        decay_grad += fw.alpha[j] * fw.affinity[j] * fw.kernel[j] * -(ctx.time - tj);
    }
    if !ctx.history.is_empty() {
        grad.add_decay(u, upstream * decay_grad);
    }
}

/// Adds `scale · ∂λ/∂θ` to `grad` and returns λ.
pub fn intensity_grad(ctx: &IntensityContext, table: &EmbeddingTable, scale: f64, grad: &mut SparseGrad) -> f64 {
    let fw = forward(ctx, table);
    backward(ctx, table, &fw, scale, grad);
    fw.lambda
}

/// Temporal loss of one event, `−log σ(λ(u, v)) − Σ_i log σ(−λ(u, n_i))`.
/// When `grad` is given, `scale` times the gradient is accumulated into it.
pub fn temporal_event_loss(
    ctx: &IntensityContext,
    negatives: &[usize],
    table: &EmbeddingTable,
    grad: Option<(&mut SparseGrad, f64)>,
) -> f64 {
    let fw = forward(ctx, table);
    let mut loss = neg_log_sigmoid(fw.lambda);
    let mut neg_ctx = Vec::with_capacity(negatives.len());
    for &n in negatives {
        let c = ctx.with_target(n);
        let f = forward_with(&c, table, fw.alpha.clone());
        loss += neg_log_sigmoid(-f.lambda);
        neg_ctx.push((c, f));
    }
    if let Some((grad, scale)) = grad {
        backward(ctx, table, &fw, scale * (sigmoid(fw.lambda) - 1.0), grad);
        for (c, f) in &neg_ctx {
            backward(c, table, f, scale * sigmoid(f.lambda), grad);
        }
    }
    loss
}
