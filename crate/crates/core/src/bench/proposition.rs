//! Rank-correlation sweep over subspace count `m` and codebook size `K`.
//!
//! For every grid cell a codebook is trained on the dump's keys and each
//! sampled query's exact scores `q · k` over all keys are compared with its
//! lookup scores by Spearman ρ. The expected trend is `1 - ρ` growing with
//! `d_k / (m K)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adc::{adc_scores, build_luts};
use crate::error::{Error, Result};
use crate::metrics::{spearman_row, RowRho};
use crate::pq::{encode_keys, train_codebook, PqConfig, MAX_CENTROIDS};
use crate::tensor::dot;
use crate::tensorio::{generate_synthetic, AttentionDump, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionOptions {
    pub kmeans_iters: usize,
    pub tolerance: f64,
    pub kmeans_seed: u64,
    /// Evenly spaced (head, query) rows to score; `None` uses all.
    pub query_rows: Option<usize>,
}

impl Default for PropositionOptions {
    fn default() -> Self {
        let pq = PqConfig::default();
        Self {
            kmeans_iters: pq.kmeans_iters,
            tolerance: pq.tolerance,
            kmeans_seed: 0,
            query_rows: Some(1024),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionCell {
    pub m: usize,
    pub k: usize,
    /// `d_k / (m K)`.
    pub bound_term: f64,
    pub mean_rho: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionTable {
    pub head_dim: usize,
    pub cells: Vec<PropositionCell>,
    /// Per `m`: whether mean ρ is non-decreasing as `K` grows.
    pub monotone_in_k: Vec<(usize, bool)>,
    /// Pearson correlation between `1 - ρ` and `d_k / (m K)` across cells.
    pub pearson_r: f64,
    /// Least-squares `C` in `1 - ρ ≈ C · d_k / (m K)`.
    pub fit_constant: f64,
}

impl PropositionTable {
    pub fn all_monotone(&self) -> bool {
        self.monotone_in_k.iter().all(|&(_, ok)| ok)
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Mean ρ between exact and lookup scores for one (m, K) on `dump`.
pub fn mean_score_rho(
    dump: &AttentionDump,
    m: usize,
    k: usize,
    options: &PropositionOptions,
) -> Result<(f64, usize)> {
    let config = PqConfig {
        num_subspaces: m,
        num_centroids: k,
        kmeans_iters: options.kmeans_iters,
        kmeans_seed: options.kmeans_seed,
        tolerance: options.tolerance,
    };
    let codebook = train_codebook(dump.keys.as_slice(), dump.head_dim(), &config)?;
    let cache = encode_keys(&dump.keys, &codebook)?;
    let (h, l) = (dump.head_count(), dump.seq_len());
    let total = h * l;
    let rows = options.query_rows.map_or(total, |r| r.clamp(1, total));
    let rhos: Vec<Option<f64>> = (0..rows)
        .into_par_iter()
        .map(|r| -> Result<Option<f64>> {
            let flat = r * total / rows;
            let (head, q) = (flat / l, flat % l);
            let query = dump.queries.row(head, q);
            let exact: Vec<f32> = (0..l).map(|j| dot(query, dump.keys.row(head, j))).collect();
            let approx = adc_scores(&build_luts(query, &codebook)?, &cache, head)?;
            Ok(match spearman_row(&exact, &approx) {
                RowRho::Value(v) => Some(v),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;
    let valid: Vec<f64> = rhos.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::InvalidConfig(
            "no rows with a defined rank correlation".into(),
        ));
    }
    Ok((valid.iter().sum::<f64>() / valid.len() as f64, valid.len()))
}

pub fn run_proposition_sweep(
    base: &SynthSpec,
    m_values: &[usize],
    k_values: &[usize],
    options: &PropositionOptions,
) -> Result<PropositionTable> {
    let dump = generate_synthetic(base)?;
    run_proposition_sweep_on(&dump, m_values, k_values, options)
}

pub fn run_proposition_sweep_on(
    dump: &AttentionDump,
    m_values: &[usize],
    k_values: &[usize],
    options: &PropositionOptions,
) -> Result<PropositionTable> {
    let d = dump.head_dim();
    if m_values.is_empty() || k_values.is_empty() {
        return Err(Error::InvalidConfig(
            "m and K lists must be nonempty".into(),
        ));
    }
    for &m in m_values {
        if m == 0 || !d.is_multiple_of(m) {
            return Err(Error::SubspaceMismatch {
                head_dim: d,
                num_subspaces: m,
            });
        }
    }
    for &k in k_values {
        if k == 0 || k > MAX_CENTROIDS {
            return Err(Error::InvalidConfig(format!(
                "K must be in 1..={MAX_CENTROIDS}, got {k}"
            )));
        }
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let mut cells = Vec::new();
    let mut monotone_in_k = Vec::new();
    for &m in m_values {
        let mut prev: Option<f64> = None;
        let mut monotone = true;
        for &k in &ks {
            let (mean_rho, rows) = mean_score_rho(dump, m, k, options)?;
            if prev.is_some_and(|p| mean_rho < p) {
                monotone = false;
            }
            prev = Some(mean_rho);
            cells.push(PropositionCell {
                m,
                k,
                bound_term: d as f64 / (m * k) as f64,
                mean_rho,
                rows,
            });
        }
        monotone_in_k.push((m, monotone));
    }

    let xs: Vec<f64> = cells.iter().map(|c| c.bound_term).collect();
    let ys: Vec<f64> = cells.iter().map(|c| 1.0 - c.mean_rho).collect();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let fit_constant = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
    Ok(PropositionTable {
        head_dim: d,
        pearson_r: pearson(&xs, &ys),
        fit_constant,
        cells,
        monotone_in_k,
    })
}
