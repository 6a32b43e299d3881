use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::quantizer::{kmeans_init, Codebook, QuantizerConfig, DEFAULT_ITERS};
use crate::seed::{self, derive_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub l: usize,
    pub g: usize,
    pub trial: usize,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSweep {
    pub rows: Vec<VarianceRow>,
}

impl VarianceSweep {
    /// Mean variance over trials for one `(L, G)` cell.
    pub fn mean(&self, l: usize, g: usize) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.l == l && r.g == g).map(|r| r.variance).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Sum over coordinates of the population variance of the rows of `x`.
///
/// Each coordinate is shifted by its first value before accumulating, so a
/// column of identical values contributes exactly zero.
pub fn total_variance(x: &[Vec<f64>]) -> f64 {
    let Some(first) = x.first() else { return 0.0 };
    let n = x.len() as f64;
    (0..first.len())
        .map(|j| {
            let (mut s, mut s2) = (0.0, 0.0);
            for row in x {
                let d = row[j] - first[j];
                s += d;
                s2 += d * d;
            }
            let mean = s / n;
            (s2 / n - mean * mean).max(0.0)
        })
        .sum()
}

/// For every `(L, G)` and trial: draw `samples` standard Gaussian vectors in
/// `R^m`, fit a codebook of `L` entries to their head segments by k-means,
/// quantize them and record the total variance of the quantized vectors.
pub fn gaussian_variance_sweep(
    m: usize,
    l_values: &[usize],
    g_values: &[usize],
    samples: usize,
    trials: usize,
    seed: u64,
) -> Result<VarianceSweep> {
    if samples == 0 || m == 0 {
        return Err(Error::config("variance sweep needs m >= 1 and samples >= 1"));
    }
    if let Some(g) = g_values.iter().find(|&&g| g == 0 || m % g != 0) {
        return Err(Error::config(format!("{m} not divisible by {g}")));
    }
    let mut rows = Vec::new();
    for t in 0..trials {
        let trial_seed = derive_seed(seed, t as u64);
        let data = Tensor::randn(vec![samples, m], &mut seed::stream_rng(trial_seed, Stream::Data));
        for &l in l_values {
            for &g in g_values {
                let config = QuantizerConfig::new(l, g, m)?;
                let segs = data.reshape(vec![samples * g, m / g])?;
                let mut rng = seed::stream_rng(derive_seed(trial_seed, (l * 1000 + g) as u64), Stream::Init);
                let cb = kmeans_init(&segs, l, DEFAULT_ITERS, &mut rng)?;
                let q = quantize_rows(&data, &cb, &config)?;
                rows.push(VarianceRow {
                    l,
                    g,
                    trial: t,
                    variance: total_variance(&q),
                });
            }
        }
    }
    Ok(VarianceSweep { rows })
}

fn quantize_rows(data: &Tensor, cb: &Codebook, config: &QuantizerConfig) -> Result<Vec<Vec<f64>>> {
    (0..data.rows()).map(|i| cb.quantize(data.row(i), config).map(|s| s.z)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
    pub code: usize,
}

/// Displacement `q(h) − h` on a `steps × steps` grid spanning
/// `[lo, hi]²` (row-major, `y` outer), for a codebook of 2-D codes.
pub fn vector_field(lo: f64, hi: f64, steps: usize, codebook: &Codebook) -> Result<Vec<FieldPoint>> {
    if codebook.dim() != 2 {
        return Err(Error::invalid(format!("vector field needs 2-D codes, got {}", codebook.dim())));
    }
    if steps == 0 || !(hi >= lo) {
        return Err(Error::invalid("vector field needs steps >= 1 and lo <= hi"));
    }
    let coord = |i: usize| {
        if steps == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (steps - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(steps * steps);
    for iy in 0..steps {
        for ix in 0..steps {
            let (x, y) = (coord(ix), coord(iy));
            let code = codebook.nearest(&[x, y])?;
            let c = codebook.row(code);
            out.push(FieldPoint {
                x,
                y,
                dx: c[0] - x,
                dy: c[1] - y,
                code,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_code_has_zero_variance() {
        let s = gaussian_variance_sweep(8, &[1], &[1, 2, 8], 100, 3, 1).unwrap();
        assert!(s.rows.iter().all(|r| r.variance == 0.0));
    }

    #[test]
    fn lossless_limit_approaches_raw_variance() {
        let s = gaussian_variance_sweep(2, &[40], &[2], 40, 1, 2).unwrap();
        let raw = Tensor::randn(vec![40, 2], &mut seed::stream_rng(derive_seed(2, 0), Stream::Data));
        let raw: Vec<Vec<f64>> = (0..40).map(|i| raw.row(i).to_vec()).collect();
        let v = s.rows[0].variance;
        assert!((v - total_variance(&raw)).abs() / total_variance(&raw) < 0.05, "{v}");
    }

    #[test]
    fn field_on_codes_is_still() {
        let cb = Codebook::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let f = vector_field(-1.0, 1.0, 3, &cb).unwrap();
        let at = |x: f64, y: f64| f.iter().find(|p| p.x == x && p.y == y).unwrap();
        assert_eq!((at(1.0, 0.0).dx, at(1.0, 0.0).dy), (0.0, 0.0));
        for p in f.iter().filter(|p| p.x > 0.0) {
            assert_eq!(p.code, 0);
        }
        assert!(vector_field(0.0, 1.0, 2, &Codebook::from_rows(&[vec![0.0]]).unwrap()).is_err());
    }
}
