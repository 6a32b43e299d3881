use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed::{self, Stream};

/// Parameters of one adding-task split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddingConfig {
    /// Number of value-carrying steps.
    pub seq_len: usize,
    /// Number of trailing zero steps after the values.
    pub gap_len: usize,
    /// Values are drawn uniformly from `[0, max_value)`.
    pub max_value: f64,
}

impl AddingConfig {
    pub fn new(seq_len: usize, gap_len: usize) -> Self {
        AddingConfig {
            seq_len,
            gap_len,
            max_value: 1.0,
        }
    }

    pub fn total_len(&self) -> usize {
        self.seq_len + self.gap_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::config("adding task needs seq_len >= 1"));
        }
        if !(self.max_value > 0.0) || !self.max_value.is_finite() {
            return Err(Error::config(format!("max_value must be positive, got {}", self.max_value)));
        }
        Ok(())
    }
}

/// `seq_len + gap_len` steps of `(value, marker)`; the target is the sum of
/// the marked values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddingSample {
    pub values: Vec<f64>,
    pub markers: Vec<bool>,
    pub target: f64,
    pub gap_len: usize,
}

impl AddingSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddingSamples {
    pub config: AddingConfig,
    pub seed: u64,
    pub samples: Vec<AddingSample>,
}

impl AddingSamples {
    /// Inputs `[count, T, 2]` (value, marker) and targets `[count, 1]`.
    pub fn tensors(&self) -> (Tensor, Tensor) {
        self.batch(&(0..self.samples.len()).collect::<Vec<_>>())
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let t = self.config.total_len();
        let mut x = Vec::with_capacity(idx.len() * t * 2);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &self.samples[i];
            for (v, &m) in s.values.iter().zip(&s.markers) {
                x.push(*v);
                x.push(if m { 1.0 } else { 0.0 });
            }
            y.push(s.target);
        }
        (
            Tensor::new(vec![idx.len(), t, 2], x).expect("consistent lengths"),
            Tensor::new(vec![idx.len(), 1], y).expect("consistent lengths"),
        )
    }
}

/// `count` samples with unit-range values.
pub fn gen_adding(count: usize, seq_len: usize, gap_len: usize, seed: u64) -> Result<AddingSamples> {
    gen_adding_with(&AddingConfig::new(seq_len, gap_len), count, seed)
}

/// Two distinct positions among the first `seq_len` steps are marked (one
/// when `seq_len == 1`). Gap steps carry zero values and no marker.
pub fn gen_adding_with(config: &AddingConfig, count: usize, seed: u64) -> Result<AddingSamples> {
    config.validate()?;
    let mut rng = seed::stream_rng(seed, Stream::Data);
    let samples = (0..count).map(|_| sample(config, &mut rng)).collect();
    Ok(AddingSamples {
        config: *config,
        seed,
        samples,
    })
}

fn sample<R: Rng + ?Sized>(config: &AddingConfig, rng: &mut R) -> AddingSample {
    let n = config.seq_len;
    let mut values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * config.max_value).collect();
    let mut markers = vec![false; n];
    for i in index::sample(rng, n, n.min(2)) {
        markers[i] = true;
    }
    let target = values.iter().zip(&markers).filter(|(_, &m)| m).map(|(v, _)| v).sum();
    values.resize(config.total_len(), 0.0);
    markers.resize(config.total_len(), false);
    AddingSample {
        values,
        markers,
        target,
        gap_len: config.gap_len,
    }
}
