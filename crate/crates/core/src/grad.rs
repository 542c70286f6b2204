//! Sparse gradient containers.

use crate::embedding::EmbeddingTable;
use crate::linalg::{axpy, Matrix};

/// Gradient over a handful of embedding rows and decay scalars. Lookup is
/// linear, which is fine for the few rows one event touches.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    dim: usize,
    ids: Vec<usize>,
    data: Vec<f64>,
    decay: Vec<(usize, f64)>,
}

impl SparseGrad {
    pub fn new(dim: usize) -> Self {
        SparseGrad {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            decay: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        let pos = match self.ids.iter().position(|&x| x == id) {
            Some(p) => p,
            None => {
                self.ids.push(id);
                self.data.resize(self.data.len() + self.dim, 0.0);
                self.ids.len() - 1
            }
        };
        &mut self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn add_decay(&mut self, id: usize, g: f64) {
        match self.decay.iter_mut().find(|(x, _)| *x == id) {
            Some((_, acc)) => *acc += g,
            None => self.decay.push((id, g)),
        }
    }

    /// Rows in insertion order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, &self.data[i * self.dim..(i + 1) * self.dim]))
    }

    pub fn decays(&self) -> &[(usize, f64)] {
        &self.decay
    }

    /// Row gradient for `id`, zeros when untouched.
    pub fn row(&self, id: usize) -> Vec<f64> {
        match self.ids.iter().position(|&x| x == id) {
            Some(p) => self.data[p * self.dim..(p + 1) * self.dim].to_vec(),
            None => vec![0.0; self.dim],
        }
    }

    pub fn decay_of(&self, id: usize) -> f64 {
        self.decay
            .iter()
            .find(|(x, _)| *x == id)
            .map_or(0.0, |&(_, g)| g)
    }

    pub fn clear(&mut self) {
        self.ids.clear();
        self.data.clear();
        self.decay.clear();
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
        self.decay.iter_mut().for_each(|(_, g)| *g *= s);
    }

    /// Plain gradient step on `table`.
    pub fn apply(&self, table: &mut EmbeddingTable, lr: f64) {
        for (id, g) in self.rows() {
            axpy(table.vector_mut(id), -lr, g);
        }
        for &(id, g) in &self.decay {
            let raw = table.decay(id) - lr * g;
            table.set_decay(id, raw);
        }
    }
}

/// Dense per-batch accumulator over embedding rows, decay scalars and
/// (optionally) subgraph centroids. Only touched rows are cleared between
/// batches.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    dim: usize,
    rows: Vec<f64>,
    row_touched: Vec<bool>,
    touched: Vec<usize>,
    decay: Vec<f64>,
    decay_touched: Vec<usize>,
    decay_flag: Vec<bool>,
    pub centroids: Option<Matrix>,
}

impl GradAccumulator {
    pub fn new(n: usize, dim: usize) -> Self {
        GradAccumulator {
            dim,
            rows: vec![0.0; n * dim],
            row_touched: vec![false; n],
            touched: Vec::new(),
            decay: vec![0.0; n],
            decay_touched: Vec::new(),
            decay_flag: vec![false; n],
            centroids: None,
        }
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        if !self.row_touched[id] {
            self.row_touched[id] = true;
            self.touched.push(id);
        }
        &mut self.rows[id * self.dim..(id + 1) * self.dim]
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    pub fn add_decay(&mut self, id: usize, g: f64) {
        if !self.decay_flag[id] {
            self.decay_flag[id] = true;
            self.decay_touched.push(id);
        }
        self.decay[id] += g;
    }

    /// Adds `scale * g`.
    pub fn add_sparse(&mut self, g: &SparseGrad, scale: f64) {
        for (id, row) in g.rows() {
            axpy(self.row_mut(id), scale, row);
        }
        for &(id, d) in g.decays() {
            self.add_decay(id, scale * d);
        }
    }

    pub fn touched_rows(&self) -> &[usize] {
        &self.touched
    }

    pub fn squared_norm(&self) -> f64 {
        let rows: f64 = self
            .touched
            .iter()
            .map(|&id| self.row(id).iter().map(|x| x * x).sum::<f64>())
            .sum();
        let decay: f64 = self.decay_touched.iter().map(|&id| self.decay[id].powi(2)).sum();
        let centroids: f64 = self
            .centroids
            .as_ref()
            .map_or(0.0, |c| c.as_slice().iter().map(|x| x * x).sum());
        rows + decay + centroids
    }

    /// Takes one step of size `lr` on the table (and centroids when present),
    /// after rescaling the whole gradient to norm at most `clip`.
    pub fn apply(&self, table: &mut EmbeddingTable, centroids: Option<&mut Matrix>, lr: f64, clip: f64) {
        let norm = self.squared_norm().sqrt();
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        let step = -lr * scale;
        for &id in &self.touched {
            axpy(table.vector_mut(id), step, self.row(id));
        }
        for &id in &self.decay_touched {
            let raw = table.decay(id) + step * self.decay[id];
            table.set_decay(id, raw);
        }
        if let (Some(c), Some(g)) = (centroids, self.centroids.as_ref()) {
            axpy(c.as_mut_slice(), step, g.as_slice());
        }
    }

    pub fn clear(&mut self) {
        for &id in &self.touched {
            self.rows[id * self.dim..(id + 1) * self.dim].fill(0.0);
            self.row_touched[id] = false;
        }
        self.touched.clear();
        for &id in &self.decay_touched {
            self.decay[id] = 0.0;
            self.decay_flag[id] = false;
        }
        self.decay_touched.clear();
        if let Some(c) = self.centroids.as_mut() {
            c.as_mut_slice().fill(0.0);
        }
    }
}
