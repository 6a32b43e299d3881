use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Tensor};

/// Shape and loss weights of a multi-head quantizer.
///
/// A length-`dim` message is cut into `heads` contiguous segments of
/// `dim / heads` values, and each segment is snapped to one of
/// `codebook_size` shared code vectors of that same length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub codebook_size: usize,
    pub heads: usize,
    pub dim: usize,
    pub beta: f64,
    pub codebook_loss_weight: f64,
}

impl QuantizerConfig {
    pub const DEFAULT_BETA: f64 = 0.25;

    pub fn new(codebook_size: usize, heads: usize, dim: usize) -> Result<Self> {
        let c = QuantizerConfig {
            codebook_size,
            heads,
            dim,
            beta: Self::DEFAULT_BETA,
            codebook_loss_weight: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.beta = beta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_codebook_loss_weight(mut self, w: f64) -> Result<Self> {
        self.codebook_loss_weight = w;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 || self.heads == 0 || self.dim == 0 {
            return Err(Error::config(format!(
                "codebook size, heads and dim must be positive (L={}, G={}, m={})",
                self.codebook_size, self.heads, self.dim
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "{} not divisible by {}",
                self.dim, self.heads
            )));
        }
        if !(self.beta > 0.0) || !(self.codebook_loss_weight > 0.0) {
            return Err(Error::config(format!(
                "beta and codebook_loss_weight must be positive (beta={}, weight={})",
                self.beta, self.codebook_loss_weight
            )));
        }
        Ok(())
    }

    /// Length of one head segment, `dim / heads`.
    pub fn segment_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Splits `h` into `heads` contiguous, equal-length slices.
pub fn segment(h: &[f64], heads: usize) -> Result<Vec<&[f64]>> {
    if heads == 0 || h.len() % heads != 0 {
        return Err(Error::invalid(format!("{} not divisible by {heads}", h.len())));
    }
    let d = h.len() / heads;
    Ok(h.chunks(d.max(1)).take(heads).collect())
}

/// The `L × d` table of code vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    entries: Tensor,
    initialized: bool,
}

/// Pure (tape-free) quantization result for a single vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapped {
    pub z: Vec<f64>,
    pub indices: Vec<usize>,
    pub codebook_loss: f64,
    pub commitment_loss: f64,
}

impl Codebook {
    /// A codebook of zeros that refuses lookups until initialized.
    pub fn uninitialized(size: usize, dim: usize) -> Self {
        Codebook {
            entries: Tensor::zeros(vec![size, dim]),
            initialized: false,
        }
    }

    pub fn from_entries(entries: Tensor) -> Result<Self> {
        if entries.rank() != 2 || entries.rows() == 0 {
            return Err(Error::shape(
                "codebook",
                format!("expected [L, d] with L >= 1, got {:?}", entries.shape()),
            ));
        }
        Ok(Codebook {
            entries,
            initialized: true,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_entries(Tensor::from_rows(rows)?)
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.row_len()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.entries.row(j)
    }

    /// Index of the code nearest to `s` in squared Euclidean distance; ties
    /// go to the lowest index.
    pub fn nearest(&self, s: &[f64]) -> Result<usize> {
        if !self.initialized {
            return Err(Error::UninitializedCodebook);
        }
        if s.len() != self.dim() {
            return Err(Error::shape(
                "nearest-code",
                format!("segment of {} vs codes of {}", s.len(), self.dim()),
            ));
        }
        Ok(nearest_row(self.entries.data(), self.dim(), s))
    }

    /// Snaps every head of `h` and evaluates both auxiliary losses.
    pub fn quantize(&self, h: &[f64], config: &QuantizerConfig) -> Result<Snapped> {
        if h.len() != config.dim || config.segment_dim() != self.dim() || config.codebook_size != self.size() {
            return Err(Error::shape(
                "quantize",
                format!(
                    "vector of {} with L={}, G={}, m={} against codebook {:?}",
                    h.len(),
                    config.codebook_size,
                    config.heads,
                    config.dim,
                    self.entries.shape()
                ),
            ));
        }
        let mut z = Vec::with_capacity(h.len());
        let mut indices = Vec::with_capacity(config.heads);
        let mut dist = 0.0;
        for s in segment(h, config.heads)? {
            let j = self.nearest(s)?;
            dist += sq_dist(s, self.row(j));
            z.extend_from_slice(self.row(j));
            indices.push(j);
        }
        let per_head = dist / config.heads as f64;
        Ok(Snapped {
            z,
            indices,
            codebook_loss: per_head,
            commitment_loss: per_head,
        })
    }
}

/// Lowest-index argmin of squared distance from `s` to the rows of `table`.
pub(crate) fn nearest_row(table: &[f64], d: usize, s: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, row) in table.chunks(d.max(1)).enumerate() {
        let dj = sq_dist(s, row);
        if dj < best_d {
            best_d = dj;
            best = j;
        }
    }
    best
}

/// Free-function form of [`Codebook::nearest`].
pub fn nearest_code(s: &[f64], codebook: &Codebook) -> Result<usize> {
    codebook.nearest(s)
}
