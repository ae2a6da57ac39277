//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use lookat::Codebook;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect()
}

pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Exhaustive nearest centroid per subspace, first minimum wins.
pub fn brute_force_codes(key: &[f32], cb: &Codebook) -> Vec<u8> {
    let d_sub = cb.sub_dim();
    (0..cb.num_subspaces())
        .map(|i| {
            let sub = &key[i * d_sub..(i + 1) * d_sub];
            let mut best_code = 0usize;
            let mut best_dist = f32::INFINITY;
            for c in 0..cb.num_centroids() {
                let cent = cb.centroid(i, c);
                let mut dist = 0.0f32;
                for j in 0..d_sub {
                    let diff = sub[j] - cent[j];
                    dist += diff * diff;
                }
                if dist < best_dist {
                    best_dist = dist;
                    best_code = c;
                }
            }
            best_code as u8
        })
        .collect()
}

/// Rank of each entry by counting: 1 + #smaller + (#equal others) / 2.
pub fn naive_ranks(xs: &[f32]) -> Vec<f64> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let ties = xs
                .iter()
                .enumerate()
                .filter(|&(j, &y)| j != i && y == x)
                .count() as f64;
            1.0 + less + ties / 2.0
        })
        .collect()
}

/// Rank-then-Pearson; `None` when either side has zero rank variance.
pub fn naive_spearman(a: &[f32], b: &[f32]) -> Option<f64> {
    let ra = naive_ranks(a);
    let rb = naive_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Random codebook with normal centroids.
pub fn random_codebook(rng: &mut ChaCha8Rng, m: usize, k: usize, d_sub: usize) -> Codebook {
    Codebook::from_centroids(m, k, d_sub, normal_vec(rng, m * k * d_sub)).unwrap()
}

/// Codebook on a small integer lattice, so equal distances are exact and ties common.
pub fn lattice_codebook(rng: &mut ChaCha8Rng, m: usize, k: usize, d_sub: usize) -> Codebook {
    let c = (0..m * k * d_sub)
        .map(|_| rng.gen_range(-2i32..=2) as f32 * 2.0)
        .collect();
    Codebook::from_centroids(m, k, d_sub, c).unwrap()
}

pub fn lattice_key(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.gen_range(-4i32..=4) as f32).collect()
}
