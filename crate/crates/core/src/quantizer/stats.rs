use serde::{Deserialize, Serialize};

use super::vq::QuantizationOutput;

/// Usage histogram over code indices and its perplexity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookStats {
    pub usage: Vec<u64>,
    pub perplexity: f64,
}

impl CodebookStats {
    pub fn from_indices(indices: &[usize], size: usize) -> Self {
        let mut usage = vec![0u64; size];
        for &i in indices {
            usage[i] += 1;
        }
        Self::from_usage(usage)
    }

    /// Perplexity is `exp(−Σ p ln p)`, and 1 for an empty histogram.
    pub fn from_usage(usage: Vec<u64>) -> Self {
        let total: u64 = usage.iter().sum();
        let perplexity = if total == 0 {
            1.0
        } else {
            let t = total as f64;
            let h: f64 = usage
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / t;
                    -p * p.ln()
                })
                .sum();
            h.exp()
        };
        CodebookStats { usage, perplexity }
    }

    pub fn observed(&self) -> u64 {
        self.usage.iter().sum()
    }

    pub fn merge(&mut self, other: &CodebookStats) {
        for (a, b) in self.usage.iter_mut().zip(&other.usage) {
            *a += b;
        }
        *self = Self::from_usage(std::mem::take(&mut self.usage));
    }
}

pub fn codebook_stats(outputs: &[QuantizationOutput], size: usize) -> CodebookStats {
    let mut usage = vec![0u64; size];
    for i in outputs.iter().flat_map(|o| o.indices.iter()) {
        usage[*i] += 1;
    }
    CodebookStats::from_usage(usage)
}
