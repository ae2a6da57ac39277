//! Fidelity metrics comparing an approximate attention result to the exact one.
//!
//! All four metrics are averages over (head, query row). Row values are
//! computed in parallel and then reduced in a fixed order, so reports do not
//! depend on the thread schedule.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionOutput;
use crate::error::Result;

/// Probability floor applied before the KL logarithm.
pub const KL_EPSILON: f64 = 1e-10;
pub const TOP_K: usize = 5;

/// Row counts excluded or special-cased by the metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDiagnostics {
    /// Rows where exactly one side had constant weights (ρ undefined).
    pub spearman_skipped_rows: u64,
    /// Rows with fewer than five visible keys, scored against `min(5, n)`.
    pub top5_short_rows: u64,
}

impl MetricDiagnostics {
    fn add(&mut self, other: &Self) {
        self.spearman_skipped_rows += other.spearman_skipped_rows;
        self.top5_short_rows += other.top5_short_rows;
    }
}

/// Metric means, with standard deviations across samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub cosine_sim: f64,
    pub kl_div: f64,
    pub spearman_rho: f64,
    pub top5_acc: f64,
    pub cosine_sim_std: f64,
    pub kl_div_std: f64,
    pub spearman_rho_std: f64,
    pub top5_acc_std: f64,
    pub samples: usize,
    pub diagnostics: MetricDiagnostics,
}

impl FidelityReport {
    /// Combines per-sample reports: means of means, sample standard deviation
    /// (n - 1 denominator, 0 for a single sample).
    pub fn aggregate(samples: &[FidelityReport]) -> Option<FidelityReport> {
        if samples.is_empty() {
            return None;
        }
        let stat = |f: fn(&FidelityReport) -> f64| {
            let xs: Vec<f64> = samples.iter().map(f).collect();
            mean_std(&xs)
        };
        let (cosine_sim, cosine_sim_std) = stat(|r| r.cosine_sim);
        let (kl_div, kl_div_std) = stat(|r| r.kl_div);
        let (spearman_rho, spearman_rho_std) = stat(|r| r.spearman_rho);
        let (top5_acc, top5_acc_std) = stat(|r| r.top5_acc);
        let mut diagnostics = MetricDiagnostics::default();
        for s in samples {
            diagnostics.add(&s.diagnostics);
        }
        Some(FidelityReport {
            cosine_sim,
            kl_div,
            spearman_rho,
            top5_acc,
            cosine_sim_std,
            kl_div_std,
            spearman_rho_std,
            top5_acc_std,
            samples: samples.iter().map(|s| s.samples).sum(),
            diagnostics,
        })
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates all four metrics for one sample.
pub fn evaluate(reference: &AttentionOutput, approx: &AttentionOutput) -> Result<FidelityReport> {
    let cosine_sim = cosine_similarity(reference, approx)?;
    let kl_div = kl_divergence(reference, approx)?;
    let (spearman_rho, spearman_skipped_rows) = spearman_rho_with_tally(reference, approx)?;
    let (top5_acc, top5_short_rows) = top5_accuracy_with_tally(reference, approx)?;
    Ok(FidelityReport {
        cosine_sim,
        kl_div,
        spearman_rho,
        top5_acc,
        cosine_sim_std: 0.0,
        kl_div_std: 0.0,
        spearman_rho_std: 0.0,
        top5_acc_std: 0.0,
        samples: 1,
        diagnostics: MetricDiagnostics {
            spearman_skipped_rows,
            top5_short_rows,
        },
    })
}

fn row_indices(out: &AttentionOutput) -> Vec<(usize, usize)> {
    (0..out.head_count())
        .flat_map(|h| (0..out.query_len).map(move |q| (h, q)))
        .collect()
}

fn ordered_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn cosine_row(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean output-vector cosine over every (head, query position).
pub fn cosine_similarity(reference: &AttentionOutput, approx: &AttentionOutput) -> Result<f64> {
    reference.same_layout(approx)?;
    let rows: Vec<f64> = row_indices(reference)
        .par_iter()
        .map(|&(h, q)| cosine_row(reference.output.row(h, q), approx.output.row(h, q)))
        .collect();
    Ok(ordered_mean(rows.into_iter()))
}

fn floored(p: &[f32]) -> Vec<f64> {
    let v: Vec<f64> = p.iter().map(|&x| (x as f64).max(KL_EPSILON)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// `KL(p || q)` in nats with both sides floored at [`KL_EPSILON`] and renormalized.
pub fn kl_row(p: &[f32], q: &[f32]) -> f64 {
    let p = floored(p);
    let q = floored(q);
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    kl.max(0.0)
}

/// Mean per-row KL over rows with at least two visible keys.
pub fn kl_divergence(reference: &AttentionOutput, approx: &AttentionOutput) -> Result<f64> {
    reference.same_layout(approx)?;
    let rows: Vec<Option<f64>> = row_indices(reference)
        .par_iter()
        .map(|&(h, q)| {
            (reference.valid_len(q) >= 2)
                .then(|| kl_row(reference.valid_weights(h, q), approx.valid_weights(h, q)))
        })
        .collect();
    Ok(ordered_mean(rows.into_iter().flatten()))
}

/// Ranks starting at 1, ties receiving the average of the ranks they span.
pub fn average_ranks(xs: &[f32]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Outcome of a single-row rank correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowRho {
    Value(f64),
    /// Fewer than two entries.
    TooShort,
    /// Exactly one side is constant.
    Undefined,
}

pub fn spearman_row(a: &[f32], b: &[f32]) -> RowRho {
    if a.len() < 2 {
        return RowRho::TooShort;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    if ra == rb {
        return RowRho::Value(1.0);
    }
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    match (saa == 0.0, sbb == 0.0) {
        (true, true) => RowRho::Value(1.0),
        (false, false) => RowRho::Value((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)),
        _ => RowRho::Undefined,
    }
}

pub fn spearman_rho(reference: &AttentionOutput, approx: &AttentionOutput) -> Result<f64> {
    spearman_rho_with_tally(reference, approx).map(|(rho, _)| rho)
}

/// Mean ρ over rows with at least two visible keys, plus the number of rows
/// skipped because only one side was constant.
pub fn spearman_rho_with_tally(
    reference: &AttentionOutput,
    approx: &AttentionOutput,
) -> Result<(f64, u64)> {
    reference.same_layout(approx)?;
    let rows: Vec<RowRho> = row_indices(reference)
        .par_iter()
        .map(|&(h, q)| spearman_row(reference.valid_weights(h, q), approx.valid_weights(h, q)))
        .collect();
    let skipped = rows.iter().filter(|r| **r == RowRho::Undefined).count() as u64;
    let mean = ordered_mean(rows.into_iter().filter_map(|r| match r {
        RowRho::Value(v) => Some(v),
        _ => None,
    }));
    Ok((mean, skipped))
}

/// Indices of the `k` largest entries; ties go to the lower index.
pub fn top_k_indices(xs: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| match xs[b].total_cmp(&xs[a]) {
        Ordering::Equal => a.cmp(&b),
        other => other,
    });
    order.truncate(k);
    order
}

/// Fraction of the reference top-`min(5, n)` set recovered by the approximation.
pub fn top5_row(reference: &[f32], approx: &[f32]) -> f64 {
    let k = TOP_K.min(reference.len());
    if k == 0 {
        return f64::NAN;
    }
    let a = top_k_indices(reference, k);
    let b = top_k_indices(approx, k);
    let shared = a.iter().filter(|i| b.contains(i)).count();
    shared as f64 / k as f64
}

pub fn top5_accuracy(reference: &AttentionOutput, approx: &AttentionOutput) -> Result<f64> {
    top5_accuracy_with_tally(reference, approx).map(|(acc, _)| acc)
}

/// Mean top-5 overlap over rows with at least two visible keys, plus the
/// number of those rows that had fewer than five.
pub fn top5_accuracy_with_tally(
    reference: &AttentionOutput,
    approx: &AttentionOutput,
) -> Result<(f64, u64)> {
    reference.same_layout(approx)?;
    let rows: Vec<Option<f64>> = row_indices(reference)
        .par_iter()
        .map(|&(h, q)| {
            (reference.valid_len(q) >= 2)
                .then(|| top5_row(reference.valid_weights(h, q), approx.valid_weights(h, q)))
        })
        .collect();
    let short = (0..reference.query_len)
        .filter(|&q| (2..TOP_K).contains(&reference.valid_len(q)))
        .count()
        * reference.head_count();
    Ok((ordered_mean(rows.into_iter().flatten()), short as u64))
}
