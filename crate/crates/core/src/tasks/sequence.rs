use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed::{self, Stream};

/// Sequences of one-hot tokens labelled with their most frequent token
/// (lowest token on ties). Used by the transformer toy experiment; the
/// out-of-distribution split changes `seq_len` only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityConfig {
    pub seq_len: usize,
    pub vocab: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MajoritySamples {
    pub config: MajorityConfig,
    pub seed: u64,
    pub tokens: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

pub fn gen_majority(config: &MajorityConfig, count: usize, seed: u64) -> Result<MajoritySamples> {
    if config.seq_len == 0 || config.vocab < 2 {
        return Err(Error::config("majority task needs seq_len >= 1 and vocab >= 2"));
    }
    let mut rng = seed::stream_rng(seed, Stream::Data);
    let mut tokens = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let seq: Vec<usize> = (0..config.seq_len).map(|_| rng.random_range(0..config.vocab)).collect();
        let mut counts = vec![0usize; config.vocab];
        seq.iter().for_each(|&t| counts[t] += 1);
        let best = (0..config.vocab).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
        tokens.push(seq);
        labels.push(best);
    }
    Ok(MajoritySamples {
        config: *config,
        seed,
        tokens,
        labels,
    })
}

impl MajoritySamples {
    /// One-hot inputs `[n, seq_len, vocab]` and labels for the rows in `idx`.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let (t, v) = (self.config.seq_len, self.config.vocab);
        let mut x = vec![0.0; idx.len() * t * v];
        for (r, &i) in idx.iter().enumerate() {
            for (p, &tok) in self.tokens[i].iter().enumerate() {
                x[(r * t + p) * v + tok] = 1.0;
            }
        }
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(vec![idx.len(), t, v], x).expect("consistent"), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
