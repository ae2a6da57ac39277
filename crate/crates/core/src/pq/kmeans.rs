//! Lloyd's k-means with k-means++ seeding, run independently per subspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Outcome of clustering one subspace.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// `[k, dim]` row-major.
    pub centroids: Vec<f64>,
    /// Sum of squared distances to the assigned centroid, one entry per
    /// assignment step.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid with ties going to the lowest index.
#[inline]
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut closest: Vec<f64> = points
        .par_chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();

    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` beyond the last partial sum.
            chosen.unwrap_or_else(|| closest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every point already coincides with a chosen centroid.
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points[pick * dim..(pick + 1) * dim]);
        let newest = &centroids[start..];
        closest
            .par_iter_mut()
            .zip(points.par_chunks_exact(dim))
            .for_each(|(c, p)| {
                let d = sq_dist(p, newest);
                if d < *c {
                    *c = d;
                }
            });
    }
    centroids
}

/// Clusters `points` (`[n, dim]` row-major) into `params.k` centroids.
///
/// The recorded objective is non-increasing: each update moves a centroid to
/// the mean of its members, and an emptied centroid is moved onto the point
/// currently farthest from its own centroid.
pub fn fit(points: &[f64], dim: usize, params: KMeansParams) -> KMeansFit {
    let n = points.len() / dim;
    let k = params.k;
    debug_assert!(n >= k && k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_pp_init(points, dim, k, &mut rng);
    let mut objective = Vec::new();
    let mut assignment: Vec<(usize, f64)> = vec![(0, 0.0); n];

    for iter in 0..params.max_iters.max(1) {
        assignment
            .par_iter_mut()
            .zip(points.par_chunks_exact(dim))
            .for_each(|(a, p)| *a = nearest(p, &centroids, dim));
        // Fixed-order sum keeps the objective schedule-independent.
        let obj: f64 = assignment.iter().map(|a| a.1).sum();
        let prev = objective.last().copied();
        objective.push(obj);

        if obj == 0.0 {
            break;
        }
        if let Some(prev) = prev {
            if (prev - obj) / prev < params.tolerance {
                break;
            }
        }
        if iter + 1 == params.max_iters {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(j, _)) in points.chunks_exact(dim).zip(&assignment) {
            counts[j] += 1;
            for (s, x) in sums[j * dim..(j + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                for (c, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *c = s / inv;
                }
            }
        }

        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            let mut dist: Vec<f64> = points
                .par_chunks_exact(dim)
                .zip(assignment.par_iter())
                .map(|(p, &(j, _))| sq_dist(p, &centroids[j * dim..(j + 1) * dim]))
                .collect();
            for j in empty {
                let (far, &d) =
                    dist.iter()
                        .enumerate()
                        .fold((0, &f64::NEG_INFINITY), |best, (i, d)| {
                            if *d > *best.1 {
                                (i, d)
                            } else {
                                best
                            }
                        });
                if d <= 0.0 {
                    break;
                }
                centroids[j * dim..(j + 1) * dim]
                    .copy_from_slice(&points[far * dim..(far + 1) * dim]);
                dist[far] = 0.0;
            }
        }
    }

    KMeansFit {
        centroids,
        objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize) -> KMeansParams {
        KMeansParams {
            k,
            max_iters: 50,
            tolerance: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn identical_points_collapse_to_first_centroid() {
        let points: Vec<f64> = [1.5, -2.0].repeat(20);
        let fit = fit(&points, 2, params(4));
        assert_eq!(&fit.centroids[..2], &[1.5, -2.0]);
        assert_eq!(*fit.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn exact_cover_when_k_equals_distinct_points() {
        let points: Vec<f64> = (0..8).flat_map(|i| [i as f64, (i * i) as f64]).collect();
        let fit = fit(&points, 2, params(8));
        assert_eq!(*fit.objective.last().unwrap(), 0.0);
        let mut seen: Vec<_> = fit.centroids.chunks(2).map(|c| c[0] as i64).collect();
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn two_separated_blobs() {
        let mut points = Vec::new();
        for i in 0..10 {
            points.push(-10.0 + i as f64 * 0.01);
            points.push(10.0 + i as f64 * 0.01);
        }
        let fit = fit(&points, 1, params(2));
        let mut c = fit.centroids.clone();
        c.sort_by(f64::total_cmp);
        assert!((c[0] + 9.955).abs() < 1e-9);
        assert!((c[1] - 10.045).abs() < 1e-9);
    }
}
