//! Per-node embedding vectors plus per-node temporal decay rates.
//!
//! Binary layout (little endian): 8-byte magic `UTCSEMB\0`, `u32` version,
//! `u64` node count, `u64` dimension, row-major `f64` vectors, then one `f64`
//! decay per node. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::ByteCursor;
use crate::linalg::Matrix;

const MAGIC: &[u8; 8] = b"UTCSEMB\0";
const VERSION: u32 = 1;

/// Smallest decay rate kept after an update.
pub const MIN_DECAY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Matrix,
    decay: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(vectors: Matrix, decay: Vec<f64>) -> Result<Self> {
        if decay.len() != vectors.rows() {
            return Err(Error::DimensionMismatch {
                expected: vectors.rows(),
                found: decay.len(),
            });
        }
        if vectors.cols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if vectors.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("embedding entries must be finite".into()));
        }
        if decay.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument("decay entries must be positive".into()));
        }
        Ok(EmbeddingTable { vectors, decay })
    }

    /// Vectors from `rows`, decay 1.0 everywhere.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let decay = vec![1.0; rows.len()];
        Self::new(Matrix::from_rows(rows), decay)
    }

    /// Uniform draws in `[-0.5/d, 0.5/d]`, decay 1.0.
    pub fn random(n: usize, d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / d as f64;
        let data = (0..n * d).map(|_| rng.gen_range(-half..=half)).collect();
        Ok(EmbeddingTable {
            vectors: Matrix::from_vec(n, d, data),
            decay: vec![1.0; n],
        })
    }

    pub fn node_count(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    #[inline]
    pub fn vector(&self, v: usize) -> &[f64] {
        self.vectors.row(v)
    }

    #[inline]
    pub fn vector_mut(&mut self, v: usize) -> &mut [f64] {
        self.vectors.row_mut(v)
    }

    #[inline]
    pub fn decay(&self, v: usize) -> f64 {
        self.decay[v]
    }

    /// Sets the decay through the absolute-value reparameterization, floored
    /// at [`MIN_DECAY`].
    pub fn set_decay(&mut self, v: usize, raw: f64) {
        self.decay[v] = raw.abs().max(MIN_DECAY);
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn decays(&self) -> &[f64] {
        &self.decay
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.as_slice().iter().all(|x| x.is_finite())
            && self.decay.iter().all(|x| x.is_finite())
    }

    pub fn write_binary(&self, out: impl Write) -> std::io::Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.node_count() as u64).to_le_bytes())?;
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        for x in self.vectors.as_slice() {
            out.write_all(&x.to_le_bytes())?;
        }
        for x in &self.decay {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut cur = ByteCursor::new(&bytes);
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not an embedding table".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported embedding version {version}")));
        }
        let n = cur.u64()? as usize;
        let d = cur.u64()? as usize;
        let data = (0..n * d).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let decay = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        if !cur.is_empty() {
            return Err(Error::Format("trailing bytes after embedding table".into()));
        }
        Self::new(Matrix::from_vec(n, d, data), decay)
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
