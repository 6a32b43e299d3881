//! Lloyd's algorithm for codebook initialisation.
//!
//! Seeding picks `k` distinct samples uniformly at random (all samples, padded
//! with random repeats, when there are fewer than `k`). A centroid that ends
//! an assignment step with no members is moved onto the sample currently
//! farthest from its own centroid; each reseed claims a different sample.

use rand::seq::index;
use rand::Rng;

use super::codebook::{nearest_row, Codebook};
use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Tensor};

pub const DEFAULT_ITERS: usize = 25;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn final_inertia(&self) -> f64 {
        self.inertia.last().copied().unwrap_or(0.0)
    }
}

/// Clusters the rows of `samples` (`[n, d]`) into `k` centroids.
pub fn kmeans<R: Rng + ?Sized>(samples: &Tensor, k: usize, iters: usize, rng: &mut R) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    if samples.rank() != 2 || samples.rows() == 0 {
        return Err(Error::invalid(format!(
            "k-means needs a non-empty [n, d] sample matrix, got {:?}",
            samples.shape()
        )));
    }
    let (n, d) = (samples.rows(), samples.row_len());
    let seeds: Vec<usize> = if n >= k {
        index::sample(rng, n, k).into_vec()
    } else {
        let mut s: Vec<usize> = (0..n).collect();
        s.extend((n..k).map(|_| rng.random_range(0..n)));
        s
    };
    let mut centroids: Vec<f64> = seeds.iter().flat_map(|&i| samples.row(i).to_vec()).collect();

    let mut assignments = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    for _ in 0..iters.max(1) {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let s = samples.row(i);
            let j = nearest_row(&centroids, d, s);
            dists[i] = sq_dist(s, &centroids[j * d..(j + 1) * d]);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        inertia.push(dists.iter().sum());
        if !changed {
            break;
        }

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &j) in assignments.iter().enumerate() {
            counts[j] += 1;
            for (acc, x) in sums[j * d..(j + 1) * d].iter_mut().zip(samples.row(i)) {
                *acc += x;
            }
        }
        let mut claimed = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                for (dst, s) in centroids[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                    *dst = s / c;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !claimed[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    claimed[i] = true;
                    centroids[j * d..(j + 1) * d].copy_from_slice(samples.row(i));
                }
            }
        }
    }
    Ok(KMeansResult {
        centroids: Tensor::from_parts(vec![k, d], centroids),
        assignments,
        inertia,
        iterations,
    })
}

/// Codebook of `size` k-means centroids fitted to `samples`.
pub fn kmeans_init<R: Rng + ?Sized>(samples: &Tensor, size: usize, iters: usize, rng: &mut R) -> Result<Codebook> {
    let r = kmeans(samples, size, iters, rng)?;
    Codebook::from_entries(r.centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn sorted_rows(t: &Tensor) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = (0..t.rows()).map(|i| t.row(i).to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows
    }

    #[test]
    fn k_equals_n_recovers_samples() {
        let s = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 5.0]]).unwrap();
        let r = kmeans(&s, 3, 25, &mut rng_from(1)).unwrap();
        assert_eq!(sorted_rows(&r.centroids), sorted_rows(&s));
        assert_eq!(r.final_inertia(), 0.0);
    }

    #[test]
    fn identical_samples_single_cluster() {
        let s = Tensor::from_rows(&vec![vec![0.3, -0.7]; 5]).unwrap();
        let r = kmeans(&s, 1, 25, &mut rng_from(2)).unwrap();
        assert_eq!(r.centroids.data(), &[0.3, -0.7]);
    }

    #[test]
    fn zero_clusters_rejected() {
        let s = Tensor::from_rows(&[vec![0.0]]).unwrap();
        assert!(kmeans(&s, 0, 5, &mut rng_from(0)).is_err());
    }

    #[test]
    fn fewer_samples_than_clusters() {
        let s = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let r = kmeans(&s, 4, 10, &mut rng_from(3)).unwrap();
        assert_eq!(r.centroids.rows(), 4);
        assert!(r.centroids.data().iter().all(|&c| c == 0.0 || c == 1.0));
        assert_eq!(r.final_inertia(), 0.0);
    }
}
