//! Asymmetric distance computation: attention scores from lookup tables.
//!
//! For a query `q`, table `i` holds `q_i · c` for every centroid `c` of
//! subspace `i`. A compressed key's score is then the sum of the `m` entries
//! its codes select, which equals `q · reconstruct(codes)` without ever
//! materializing the reconstructed key.

use crate::attention::{attend, AttentionOutput};
use crate::error::{Error, Result};
use crate::pq::{Codebook, CompressedKeyCache};
use crate::tensor::dot;
use crate::tensorio::AttentionDump;

/// Per-query tables, `[m, K]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTableSet {
    tables: Vec<f32>,
    num_subspaces: usize,
    num_centroids: usize,
}

impl LookupTableSet {
    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_centroids(&self) -> usize {
        self.num_centroids
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.tables
    }

    pub fn table(&self, subspace: usize) -> &[f32] {
        &self.tables[subspace * self.num_centroids..(subspace + 1) * self.num_centroids]
    }

    /// Sum of the selected entries in ascending subspace order.
    #[inline]
    pub fn score(&self, codes: &[u8]) -> f32 {
        let mut s = 0.0f32;
        for (i, &c) in codes.iter().enumerate() {
            s += self.tables[i * self.num_centroids + c as usize];
        }
        s
    }
}

pub fn build_luts(query: &[f32], codebook: &Codebook) -> Result<LookupTableSet> {
    if query.len() != codebook.head_dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.head_dim(),
            found: query.len(),
        });
    }
    Ok(build_luts_unchecked(query, codebook))
}

fn build_luts_unchecked(query: &[f32], codebook: &Codebook) -> LookupTableSet {
    let (m, k, d_sub) = (
        codebook.num_subspaces(),
        codebook.num_centroids(),
        codebook.sub_dim(),
    );
    let mut tables = Vec::with_capacity(m * k);
    for (i, q_sub) in query.chunks_exact(d_sub).enumerate() {
        tables.extend(
            codebook
                .subspace(i)
                .chunks_exact(d_sub)
                .map(|c| dot(q_sub, c)),
        );
    }
    LookupTableSet {
        tables,
        num_subspaces: m,
        num_centroids: k,
    }
}

fn check_cache(luts_m: usize, luts_k: usize, cache: &CompressedKeyCache) -> Result<()> {
    if cache.num_subspaces() != luts_m {
        return Err(Error::DimensionMismatch {
            expected: luts_m,
            found: cache.num_subspaces(),
        });
    }
    if let Some(index) = cache.codes().iter().position(|&c| c as usize >= luts_k) {
        return Err(Error::CorruptCode {
            code: cache.codes()[index],
            index,
            num_centroids: luts_k,
        });
    }
    Ok(())
}

/// Scores every token of `head` against the query behind `luts`.
pub fn adc_scores(
    luts: &LookupTableSet,
    cache: &CompressedKeyCache,
    head: usize,
) -> Result<Vec<f32>> {
    if head >= cache.head_count() {
        return Err(Error::HeadOutOfRange {
            head,
            head_count: cache.head_count(),
        });
    }
    check_cache(luts.num_subspaces, luts.num_centroids, cache)?;
    Ok(cache
        .head(head)
        .chunks_exact(cache.num_subspaces())
        .map(|codes| luts.score(codes))
        .collect())
}

/// Full attention with keys scored through lookup tables and values kept at
/// full precision.
pub fn lookat_attention(
    dump: &AttentionDump,
    cache: &CompressedKeyCache,
    codebook: &Codebook,
) -> Result<AttentionOutput> {
    dump.validate()?;
    if cache.codebook_id != codebook.id() {
        return Err(Error::ShapeMismatch(
            "key cache was encoded with a different codebook".into(),
        ));
    }
    if dump.head_dim() != codebook.head_dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.head_dim(),
            found: dump.head_dim(),
        });
    }
    if cache.head_count() != dump.head_count() || cache.seq_len() != dump.seq_len() {
        return Err(Error::ShapeMismatch(format!(
            "cache [{}, {}] vs dump [{}, {}]",
            cache.head_count(),
            cache.seq_len(),
            dump.head_count(),
            dump.seq_len()
        )));
    }
    cache.check_against(codebook)?;
    let m = codebook.num_subspaces();
    Ok(attend(dump, |head, _q, query, out| {
        let luts = build_luts_unchecked(query, codebook);
        for (s, codes) in out.iter_mut().zip(cache.head(head).chunks_exact(m)) {
            *s = luts.score(codes);
        }
    }))
}

/// Work done per query by the lookup path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOpCount {
    pub lut_macs: u64,
    pub additions: u64,
    pub lookups: u64,
}

pub fn query_op_count(seq_len: usize, codebook: &Codebook) -> QueryOpCount {
    let (m, k, d_sub) = (
        codebook.num_subspaces() as u64,
        codebook.num_centroids() as u64,
        codebook.sub_dim() as u64,
    );
    let l = seq_len as u64;
    QueryOpCount {
        lut_macs: m * k * d_sub,
        additions: l * (m - 1),
        lookups: l * m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    fn codebook() -> Codebook {
        let centroids: Vec<f32> = (0..2 * 8 * 3)
            .map(|i| ((i * 7) % 11) as f32 - 5.0)
            .collect();
        Codebook::from_centroids(2, 8, 3, centroids).unwrap()
    }

    #[test]
    fn zero_query_zero_tables() {
        let luts = build_luts(&[0.0; 6], &codebook()).unwrap();
        assert!(luts.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn self_inner_product() {
        let cb = codebook();
        let mut q = cb.centroid(0, 5).to_vec();
        q.extend_from_slice(cb.centroid(1, 2));
        let luts = build_luts(&q, &cb).unwrap();
        let norm0: f32 = cb.centroid(0, 5).iter().map(|x| x * x).sum();
        let norm1: f32 = cb.centroid(1, 2).iter().map(|x| x * x).sum();
        assert_eq!(luts.table(0)[5], norm0);
        assert_eq!(luts.table(1)[2], norm1);
    }

    #[test]
    fn unrolled_definition() {
        let cb = codebook();
        let q = [0.3, -1.2, 2.0, 0.7, 0.1, -0.4];
        let luts = build_luts(&q, &cb).unwrap();
        let cache = CompressedKeyCache::from_codes(1, 1, 2, vec![3, 7], cb.id()).unwrap();
        let s = adc_scores(&luts, &cache, 0).unwrap();
        assert_eq!(s, vec![luts.table(0)[3] + luts.table(1)[7]]);
    }

    #[test]
    fn errors() {
        let cb = codebook();
        assert!(build_luts(&[0.0; 5], &cb).is_err());
        let luts = build_luts(&[0.0; 6], &cb).unwrap();
        let cache = CompressedKeyCache::from_codes(1, 1, 2, vec![0, 0], cb.id()).unwrap();
        assert!(matches!(
            adc_scores(&luts, &cache, 1),
            Err(Error::HeadOutOfRange {
                head: 1,
                head_count: 1
            })
        ));
        let bad = CompressedKeyCache::from_codes(1, 1, 2, vec![0, 8], cb.id()).unwrap();
        assert!(matches!(
            adc_scores(&luts, &bad, 0),
            Err(Error::CorruptCode { .. })
        ));
    }

    #[test]
    fn single_token_attends_to_itself() {
        let cb = codebook();
        let t = |v: Vec<f32>| Tensor3::from_vec([2, 1, 6], v).unwrap();
        let values: Vec<f32> = (0..12).map(|x| x as f32).collect();
        let dump = AttentionDump::new(
            t(vec![0.5; 12]),
            t(vec![1.0; 12]),
            t(values.clone()),
            "one",
            true,
        )
        .unwrap();
        let cache = crate::pq::encode_keys(&dump.keys, &cb).unwrap();
        let out = lookat_attention(&dump, &cache, &cb).unwrap();
        assert_eq!(out.weights, vec![1.0, 1.0]);
        assert_eq!(out.output.as_slice(), &values[..]);
    }

    #[test]
    fn op_count_structure() {
        let cb = Codebook::from_centroids(4, 256, 16, vec![0.0; 4 * 256 * 16]).unwrap();
        let c = query_op_count(512, &cb);
        assert_eq!(c.lut_macs, 16384);
        assert_eq!(c.additions, 512 * 3);
        assert_eq!(c.lookups, 2048);
    }
}
