//! Reference implementations shared by the integration tests and the
//! acceptance runner.

#![allow(dead_code)]

use rand::Rng;

/// Brute-force nearest-code quantization of one vector.
///
/// Returns `(z, indices, mean squared distance per head)`.
pub fn oracle_quantize(h: &[f64], codes: &[Vec<f64>], heads: usize) -> (Vec<f64>, Vec<usize>, f64) {
    let d = h.len() / heads;
    let mut z = Vec::new();
    let mut idx = Vec::new();
    let mut total = 0.0;
    for g in 0..heads {
        let s = &h[g * d..(g + 1) * d];
        let mut best = (f64::INFINITY, 0);
        for (j, c) in codes.iter().enumerate() {
            let dist: f64 = s.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, j);
            }
        }
        total += best.0;
        idx.push(best.1);
        z.extend(codes[best.1].iter().copied());
    }
    (z, idx, total / heads as f64)
}

/// Random `(L, G, d, codes, h)` with L ≤ 64, G ≤ 8, d ≤ 16. Entries are
/// rounded to a coarse grid a quarter of the time so exact ties occur.
pub fn random_instance<R: Rng>(rng: &mut R) -> (usize, usize, usize, Vec<Vec<f64>>, Vec<f64>) {
    let l = rng.random_range(1..=64);
    let g = rng.random_range(1..=8);
    let d = rng.random_range(1..=16);
    let coarse = rng.random_bool(0.25);
    let draw = |rng: &mut R| {
        let x: f64 = rng.random_range(-2.0..2.0);
        if coarse {
            (x * 2.0).round() / 2.0
        } else {
            x
        }
    };
    let codes = (0..l).map(|_| (0..d).map(|_| draw(rng)).collect()).collect();
    let h = (0..g * d).map(|_| draw(rng)).collect();
    (l, g, d, codes, h)
}

/// Sum `a + b` of the two marked entries of an adding-task sequence.
pub fn adding_target(values: &[f64], marks: &[f64]) -> f64 {
    values.iter().zip(marks).filter(|(_, &m)| m == 1.0).map(|(v, _)| v).sum()
}

/// Reciprocal-rank mean.
pub fn mrr(ranks: &[usize]) -> f64 {
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sequential push rule on an occupancy grid: object `i` moves by
/// `(dr, dc)` when the destination is on the board and empty.
pub fn oracle_push(size: usize, positions: &[(usize, usize)], moves: &[(i64, i64)]) -> Vec<(usize, usize)> {
    let mut occupied = vec![vec![false; size]; size];
    for &(r, c) in positions {
        occupied[r][c] = true;
    }
    let mut out = positions.to_vec();
    for (i, &(dr, dc)) in moves.iter().enumerate() {
        if dr == 0 && dc == 0 {
            continue;
        }
        let (r, c) = (out[i].0 as i64 + dr, out[i].1 as i64 + dc);
        let inside = (0..size as i64).contains(&r) && (0..size as i64).contains(&c);
        if inside && !occupied[r as usize][c as usize] {
            occupied[out[i].0][out[i].1] = false;
            occupied[r as usize][c as usize] = true;
            out[i] = (r as usize, c as usize);
        }
    }
    out
}
