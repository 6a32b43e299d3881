use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::quantizer::{Codebook, QuantizerConfig};
use crate::seed::{self, derive_seed, Stream};

/// Largest number of code cells `L^G` that [`verify_hoeffding`] enumerates.
pub const MAX_CELLS: usize = 4096;

/// Reference sample size as a multiple of `n`.
pub const REFERENCE_FACTOR: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub enum InputDistribution {
    StandardGaussian,
    /// Every draw is this vector.
    PointMass(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    /// `max_k |p_k − p̂_k|`.
    pub gap: f64,
    pub bound: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trials: Vec<Trial>,
    pub violation_rate: f64,
}

struct Cells {
    codebook: Codebook,
    config: QuantizerConfig,
}

impl Cells {
    fn count(&self) -> usize {
        self.config.codebook_size.pow(self.config.heads as u32)
    }

    /// Cell of `h`: its head indices read as base-L digits.
    fn cell(&self, h: &[f64]) -> usize {
        let d = self.config.segment_dim();
        h.chunks(d)
            .rev()
            .fold(0, |acc, s| acc * self.config.codebook_size + self.codebook.nearest(s).expect("initialized"))
    }

    fn frequencies<R: Rng + ?Sized>(&self, dist: &InputDistribution, draws: usize, rng: &mut R) -> Vec<f64> {
        let mut counts = vec![0u64; self.count()];
        let mut h = vec![0.0; self.config.dim];
        for _ in 0..draws {
            match dist {
                InputDistribution::StandardGaussian => h.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
                InputDistribution::PointMass(p) => h.copy_from_slice(p),
            }
            counts[self.cell(&h)] += 1;
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }
}

/// Monte Carlo check of the concentration step behind the discretized bound.
///
/// A random Gaussian codebook partitions `R^{G·d}` into `L^G` cells. Cell
/// probabilities are estimated once from `100·n` reference draws; each
/// trial then draws `n` fresh samples and records whether
/// `max_k |p_k − p̂_k|` exceeds `sqrt((G ln L + ln(2/δ)) / (2n))`.
pub fn verify_hoeffding(l: usize, g: usize, d: usize, n: usize, delta: f64, trials: usize, seed: u64) -> Result<TrialRecord> {
    verify_hoeffding_with(&InputDistribution::StandardGaussian, l, g, d, n, delta, trials, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn verify_hoeffding_with(
    dist: &InputDistribution,
    l: usize,
    g: usize,
    d: usize,
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<TrialRecord> {
    if l == 0 || g == 0 || d == 0 || n == 0 || trials == 0 {
        return Err(Error::config("L, G, d, n and trials must all be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
    }
    match l.checked_pow(g as u32) {
        Some(c) if c <= MAX_CELLS => {}
        _ => return Err(Error::config(format!("L^G = {l}^{g} exceeds the enumeration limit of {MAX_CELLS} cells"))),
    }
    if let InputDistribution::PointMass(p) = dist {
        if p.len() != g * d {
            return Err(Error::invalid(format!("point mass of length {} for G·d = {}", p.len(), g * d)));
        }
    }
    let config = QuantizerConfig::new(l, g, g * d)?;
    let mut init = seed::stream_rng(seed, Stream::Init);
    let codebook = Codebook::from_entries(Tensor::randn(vec![l, d], &mut init))?;
    let cells = Cells { codebook, config };
    let reference = cells.frequencies(dist, REFERENCE_FACTOR * n, &mut seed::stream_rng(seed, Stream::Evaluation));
    let bound = ((g as f64 * (l as f64).ln() + (2.0 / delta).ln()) / (2.0 * n as f64)).sqrt();
    let trials: Vec<Trial> = (0..trials)
        .map(|t| {
            let mut rng = seed::stream_rng(derive_seed(seed, t as u64), Stream::Data);
            let p_hat = cells.frequencies(dist, n, &mut rng);
            let gap = reference.iter().zip(&p_hat).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            Trial {
                trial: t,
                gap,
                bound,
                violated: gap > bound,
            }
        })
        .collect();
    let violation_rate = trials.iter().filter(|t| t.violated).count() as f64 / trials.len() as f64;
    Ok(TrialRecord { trials, violation_rate })
}
