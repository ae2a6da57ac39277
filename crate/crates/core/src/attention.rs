//! Scaled dot-product attention shared by the exact and approximate paths.
//!
//! Every path produces raw scores for the unmasked key positions of a query
//! row; scaling by `1/sqrt(d_k)`, causal masking, softmax and the value sum are
//! applied here identically so the paths differ only in how scores are made.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor3};
use crate::tensorio::AttentionDump;

/// Scores, weights and outputs for every head and query position.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `[H, L_q, L_k]` unscaled logits; masked positions hold 0.
    pub scores: Vec<f32>,
    /// `[H, L_q, L_k]` softmax weights; masked positions hold exactly 0.
    pub weights: Vec<f32>,
    /// `[H, L_q, d_k]`.
    pub output: Tensor3,
    pub causal: bool,
    pub query_len: usize,
    pub key_len: usize,
}

impl AttentionOutput {
    pub fn head_count(&self) -> usize {
        self.output.heads()
    }

    /// Number of key positions visible from query row `q`.
    pub fn valid_len(&self, q: usize) -> usize {
        if self.causal {
            (q + 1).min(self.key_len)
        } else {
            self.key_len
        }
    }

    fn row_range(&self, head: usize, q: usize) -> std::ops::Range<usize> {
        let start = (head * self.query_len + q) * self.key_len;
        start..start + self.key_len
    }

    /// Full `L_k`-long weight row including masked zeros.
    pub fn weight_row(&self, head: usize, q: usize) -> &[f32] {
        &self.weights[self.row_range(head, q)]
    }

    pub fn score_row(&self, head: usize, q: usize) -> &[f32] {
        &self.scores[self.row_range(head, q)]
    }

    /// Weights over the unmasked positions only.
    pub fn valid_weights(&self, head: usize, q: usize) -> &[f32] {
        &self.weight_row(head, q)[..self.valid_len(q)]
    }

    pub fn same_layout(&self, other: &Self) -> Result<()> {
        if self.output.shape() != other.output.shape()
            || self.key_len != other.key_len
            || self.causal != other.causal
        {
            return Err(Error::ShapeMismatch(format!(
                "attention outputs differ: {:?}/L_k={}/causal={} vs {:?}/L_k={}/causal={}",
                self.output.shape(),
                self.key_len,
                self.causal,
                other.output.shape(),
                other.key_len,
                other.causal
            )));
        }
        Ok(())
    }
}

/// In-place numerically stable softmax of `logits * scale`.
pub fn scaled_softmax(row: &mut [f32], scale: f32) {
    let max = row
        .iter()
        .map(|&s| s * scale)
        .fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for x in row.iter_mut() {
        *x = (*x * scale - max).exp();
        sum += *x as f64;
    }
    let inv = (1.0 / sum) as f32;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Runs attention over `dump`, with `score_row(head, q, query, out)` filling
/// the raw scores of the `out.len()` visible keys.
pub(crate) fn attend<F>(dump: &AttentionDump, score_row: F) -> AttentionOutput
where
    F: Fn(usize, usize, &[f32], &mut [f32]) + Sync,
{
    let [h, l, d] = dump.queries.shape();
    let lk = dump.keys.rows();
    let scale = 1.0 / (d as f32).sqrt();
    let causal = dump.causal;
    let mut scores = vec![0.0f32; h * l * lk];
    let mut weights = vec![0.0f32; h * l * lk];
    let mut output = Tensor3::zeros([h, l, d]);

    scores
        .par_chunks_exact_mut(lk)
        .zip(weights.par_chunks_exact_mut(lk))
        .zip(output.as_mut_slice().par_chunks_exact_mut(d))
        .enumerate()
        .for_each(|(row, ((s, w), o))| {
            let (head, q) = (row / l, row % l);
            let valid = if causal { (q + 1).min(lk) } else { lk };
            score_row(head, q, dump.queries.row(head, q), &mut s[..valid]);
            w[..valid].copy_from_slice(&s[..valid]);
            scaled_softmax(&mut w[..valid], scale);
            for (j, &a) in w[..valid].iter().enumerate() {
                for (acc, &v) in o.iter_mut().zip(dump.values.row(head, j)) {
                    *acc += a * v;
                }
            }
        });

    AttentionOutput {
        scores,
        weights,
        output,
        causal,
        query_len: l,
        key_len: lk,
    }
}

/// Exact attention `softmax(QK^T / sqrt(d_k)) V` with the dump's masking.
pub fn reference_attention(dump: &AttentionDump) -> Result<AttentionOutput> {
    dump.validate()?;
    Ok(attend(dump, |head, _q, query, out| {
        for (j, s) in out.iter_mut().enumerate() {
            *s = dot(query, dump.keys.row(head, j));
        }
    }))
}

/// Exact attention with `keys` substituted for the dump's keys.
pub fn attention_with_keys(dump: &AttentionDump, keys: &Tensor3) -> Result<AttentionOutput> {
    if keys.shape() != dump.keys.shape() {
        return Err(Error::ShapeMismatch(format!(
            "substitute keys {:?} vs dump keys {:?}",
            keys.shape(),
            dump.keys.shape()
        )));
    }
    Ok(attend(dump, |head, _q, query, out| {
        for (j, s) in out.iter_mut().enumerate() {
            *s = dot(query, keys.row(head, j));
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dump_from(
        q: Vec<f32>,
        k: Vec<f32>,
        v: Vec<f32>,
        shape: [usize; 3],
        causal: bool,
    ) -> AttentionDump {
        AttentionDump::new(
            Tensor3::from_vec(shape, q).unwrap(),
            Tensor3::from_vec(shape, k).unwrap(),
            Tensor3::from_vec(shape, v).unwrap(),
            "t",
            causal,
        )
        .unwrap()
    }

    #[test]
    fn two_token_closed_form() {
        // Orthonormal rows e0, e1 for Q and K, d_k = 4.
        let e = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let v = vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 0.5];
        let dump = dump_from(e.clone(), e, v.clone(), [1, 2, 4], true);
        let out = reference_attention(&dump).unwrap();
        assert_eq!(out.weight_row(0, 0), &[1.0, 0.0]);
        // Row 1: logits [q1.k0, q1.k1] = [0, 1], scaled by 1/2.
        let p1 = 0.5f64.exp() / (1.0 + 0.5f64.exp());
        let w = out.weight_row(0, 1);
        assert!((w[0] as f64 - (1.0 - p1)).abs() < 1e-7);
        assert!((w[1] as f64 - p1).abs() < 1e-7);
        for c in 0..4 {
            let expect = (1.0 - p1) * v[c] as f64 + p1 * v[4 + c] as f64;
            assert!((out.output.row(0, 1)[c] as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn all_ones_values_give_all_ones_output() {
        let q: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin()).collect();
        let k: Vec<f32> = (0..24).map(|i| (i as f32 * 0.11).cos()).collect();
        let dump = dump_from(q, k, vec![1.0; 24], [2, 3, 4], true);
        let out = reference_attention(&dump).unwrap();
        for x in out.output.as_slice() {
            assert!((x - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_causal_is_permutation_invariant() {
        let q: Vec<f32> = (0..20).map(|i| (i as f32 * 0.37).sin()).collect();
        let k: Vec<f32> = (0..20).map(|i| (i as f32 * 0.11).cos()).collect();
        let v: Vec<f32> = (0..20).map(|i| i as f32 * 0.1).collect();
        let dump = dump_from(q.clone(), k.clone(), v.clone(), [1, 5, 4], false);
        let perm = [3usize, 0, 4, 1, 2];
        let permute = |t: &[f32]| -> Vec<f32> {
            perm.iter()
                .flat_map(|&p| t[p * 4..p * 4 + 4].to_vec())
                .collect()
        };
        let permuted = dump_from(q, permute(&k), permute(&v), [1, 5, 4], false);
        let a = reference_attention(&dump).unwrap();
        let b = reference_attention(&permuted).unwrap();
        for (x, y) in a.output.as_slice().iter().zip(b.output.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_normalized_and_masked() {
        let q: Vec<f32> = (0..64).map(|i| (i as f32 * 1.3).sin() * 3.0).collect();
        let k: Vec<f32> = (0..64).map(|i| (i as f32 * 0.7).cos() * 3.0).collect();
        let dump = dump_from(q, k, vec![0.5; 64], [2, 8, 4], true);
        let out = reference_attention(&dump).unwrap();
        for h in 0..2 {
            for qi in 0..8 {
                let row = out.weight_row(h, qi);
                let sum: f64 = row.iter().map(|&x| x as f64).sum();
                assert!((sum - 1.0).abs() < 1e-5);
                assert!(row[qi + 1..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut row = [1000.0f32, 999.0, -1000.0];
        scaled_softmax(&mut row, 1.0);
        assert!(row.iter().all(|x| x.is_finite()));
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
