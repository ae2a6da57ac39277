//! Product quantization of key vectors.
//!
//! The head dimension is split into `m` contiguous subspaces of width
//! `d_sub = d_k / m`. Each subspace gets its own `K`-entry codebook learned by
//! k-means over the calibration keys, and every key is stored as `m` one-byte
//! centroid indices.

pub mod kmeans;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const CODEBOOK_MAGIC: [u8; 4] = *b"LKCB";
pub const CODES_MAGIC: [u8; 4] = *b"LKCC";
const FORMAT_VERSION: u32 = 1;

/// Largest centroid count whose indices fit in one byte.
pub const MAX_CENTROIDS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PqConfig {
    pub num_subspaces: usize,
    pub num_centroids: usize,
    pub kmeans_iters: usize,
    pub kmeans_seed: u64,
    /// Stop once the relative objective improvement falls below this.
    pub tolerance: f64,
}

impl Default for PqConfig {
    fn default() -> Self {
        Self {
            num_subspaces: 4,
            num_centroids: MAX_CENTROIDS,
            kmeans_iters: 25,
            kmeans_seed: 0,
            tolerance: 1e-4,
        }
    }
}

impl PqConfig {
    pub fn with_subspaces(num_subspaces: usize) -> Self {
        Self {
            num_subspaces,
            ..Self::default()
        }
    }

    /// Checks the configuration against a head dimension and returns `d_sub`.
    pub fn sub_dim(&self, head_dim: usize) -> Result<usize> {
        if self.num_centroids == 0 || self.num_centroids > MAX_CENTROIDS {
            return Err(Error::InvalidConfig(format!(
                "num_centroids must be in 1..={MAX_CENTROIDS}, got {}",
                self.num_centroids
            )));
        }
        if self.kmeans_iters == 0 {
            return Err(Error::InvalidConfig("kmeans_iters must be positive".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be nonnegative, got {}",
                self.tolerance
            )));
        }
        if self.num_subspaces == 0 || !head_dim.is_multiple_of(self.num_subspaces) {
            return Err(Error::SubspaceMismatch {
                head_dim,
                num_subspaces: self.num_subspaces,
            });
        }
        Ok(head_dim / self.num_subspaces)
    }
}

/// Per-subspace centroid tables, `[m, K, d_sub]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
    num_subspaces: usize,
    num_centroids: usize,
    sub_dim: usize,
    pub trained_on: u64,
    pub config: PqConfig,
}

impl Codebook {
    /// Wraps explicit centroids. `centroids` is `[m, K, d_sub]` row-major.
    pub fn from_centroids(
        num_subspaces: usize,
        num_centroids: usize,
        sub_dim: usize,
        centroids: Vec<f32>,
    ) -> Result<Self> {
        let config = PqConfig {
            num_subspaces,
            num_centroids,
            ..PqConfig::default()
        };
        config.sub_dim(num_subspaces * sub_dim)?;
        if sub_dim == 0 {
            return Err(Error::InvalidConfig("d_sub must be positive".into()));
        }
        let expected = num_subspaces * num_centroids * sub_dim;
        if centroids.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "codebook [{num_subspaces}, {num_centroids}, {sub_dim}] needs {expected} values, got {}",
                centroids.len()
            )));
        }
        if let Some(index) = centroids.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "centroids",
                index,
            });
        }
        Ok(Self {
            centroids,
            num_subspaces,
            num_centroids,
            sub_dim,
            trained_on: 0,
            config,
        })
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_centroids(&self) -> usize {
        self.num_centroids
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn head_dim(&self) -> usize {
        self.num_subspaces * self.sub_dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// `[K, d_sub]` table of one subspace.
    pub fn subspace(&self, i: usize) -> &[f32] {
        let stride = self.num_centroids * self.sub_dim;
        &self.centroids[i * stride..(i + 1) * stride]
    }

    pub fn centroid(&self, subspace: usize, code: usize) -> &[f32] {
        let start = (subspace * self.num_centroids + code) * self.sub_dim;
        &self.centroids[start..start + self.sub_dim]
    }

    /// Content fingerprint (FNV-1a over shape and centroid bits).
    pub fn id(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for x in [self.num_subspaces, self.num_centroids, self.sub_dim] {
            feed(&(x as u64).to_le_bytes());
        }
        for c in &self.centroids {
            feed(&c.to_le_bytes());
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.centroids.len() * 4);
        out.extend_from_slice(&CODEBOOK_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for x in [self.num_subspaces, self.num_centroids, self.sub_dim] {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        for c in &self.centroids {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.trained_on.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = read_header(bytes, CODEBOOK_MAGIC, 20)?;
        let (m, k, d_sub) = (header[0], header[1], header[2]);
        let count = m
            .checked_mul(k)
            .and_then(|x| x.checked_mul(d_sub))
            .ok_or_else(|| Error::MalformedHeader("codebook shape overflows".into()))?;
        let expected = 20 + count * 4 + 8;
        if bytes.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected,
                found: bytes.len(),
            });
        }
        let centroids = bytes[20..20 + count * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut cb = Self::from_centroids(m, k, d_sub, centroids)?;
        cb.trained_on = u64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
        Ok(cb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reads magic, version and `(len - 8) / 4` u32 header fields.
fn read_header(bytes: &[u8], magic: [u8; 4], len: usize) -> Result<Vec<usize>> {
    if bytes.len() < 4 {
        return Err(Error::MalformedHeader("file shorter than magic".into()));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < len {
        return Err(Error::MalformedHeader(format!(
            "header needs {len} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(bytes[8..len]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect())
}

/// Codebook plus the per-subspace k-means objective history.
#[derive(Debug, Clone)]
pub struct TrainedCodebook {
    pub codebook: Codebook,
    pub objective: Vec<Vec<f64>>,
}

/// Learns one codebook per subspace from `calib` (`[N, d_k]` row-major).
pub fn train_codebook(calib: &[f32], head_dim: usize, config: &PqConfig) -> Result<Codebook> {
    train_codebook_traced(calib, head_dim, config).map(|t| t.codebook)
}

pub fn train_codebook_traced(
    calib: &[f32],
    head_dim: usize,
    config: &PqConfig,
) -> Result<TrainedCodebook> {
    let sub_dim = config.sub_dim(head_dim)?;
    if !calib.len().is_multiple_of(head_dim) {
        return Err(Error::ShapeMismatch(format!(
            "calibration length {} is not a multiple of d_k = {head_dim}",
            calib.len()
        )));
    }
    let n = calib.len() / head_dim;
    if n < config.num_centroids {
        return Err(Error::InsufficientCalibration {
            available: n,
            required: config.num_centroids,
        });
    }
    if let Some(index) = calib.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            tensor: "calibration keys",
            index,
        });
    }

    let m = config.num_subspaces;
    let fits: Vec<kmeans::KMeansFit> = (0..m)
        .into_par_iter()
        .map(|i| {
            let points: Vec<f64> = calib
                .chunks_exact(head_dim)
                .flat_map(|key| {
                    key[i * sub_dim..(i + 1) * sub_dim]
                        .iter()
                        .map(|&x| x as f64)
                })
                .collect();
            kmeans::fit(
                &points,
                sub_dim,
                kmeans::KMeansParams {
                    k: config.num_centroids,
                    max_iters: config.kmeans_iters,
                    tolerance: config.tolerance,
                    seed: config
                        .kmeans_seed
                        .wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
                },
            )
        })
        .collect();

    let mut centroids = Vec::with_capacity(m * config.num_centroids * sub_dim);
    let mut objective = Vec::with_capacity(m);
    for fit in fits {
        centroids.extend(fit.centroids.iter().map(|&c| c as f32));
        objective.push(fit.objective);
    }
    let mut codebook = Codebook::from_centroids(m, config.num_centroids, sub_dim, centroids)?;
    codebook.trained_on = n as u64;
    codebook.config = config.clone();
    Ok(TrainedCodebook {
        codebook,
        objective,
    })
}

/// Squared distance between a key slice and a centroid, summed in order.
#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Writes the nearest-centroid code of each subspace of `key` into `codes`.
/// Returns the summed squared assignment distance.
pub fn encode_vector(key: &[f32], codebook: &Codebook, codes: &mut [u8]) -> Result<f32> {
    if key.len() != codebook.head_dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.head_dim(),
            found: key.len(),
        });
    }
    let d_sub = codebook.sub_dim;
    let mut total = 0.0;
    for (i, (sub, code)) in key.chunks_exact(d_sub).zip(codes.iter_mut()).enumerate() {
        let mut best = (0usize, f32::INFINITY);
        for (j, c) in codebook.subspace(i).chunks_exact(d_sub).enumerate() {
            let d = sq_dist(sub, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        *code = best.0 as u8;
        total += best.1;
    }
    Ok(total)
}

/// Keys of one dump encoded as `[H, L, m]` centroid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedKeyCache {
    codes: Vec<u8>,
    head_count: usize,
    seq_len: usize,
    num_subspaces: usize,
    pub codebook_id: u64,
}

impl CompressedKeyCache {
    pub fn from_codes(
        head_count: usize,
        seq_len: usize,
        num_subspaces: usize,
        codes: Vec<u8>,
        codebook_id: u64,
    ) -> Result<Self> {
        if codes.len() != head_count * seq_len * num_subspaces {
            return Err(Error::ShapeMismatch(format!(
                "codes [{head_count}, {seq_len}, {num_subspaces}] need {} bytes, got {}",
                head_count * seq_len * num_subspaces,
                codes.len()
            )));
        }
        Ok(Self {
            codes,
            head_count,
            seq_len,
            num_subspaces,
            codebook_id,
        })
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// The `m` codes of token `token` in head `head`.
    pub fn token(&self, head: usize, token: usize) -> &[u8] {
        let start = (head * self.seq_len + token) * self.num_subspaces;
        &self.codes[start..start + self.num_subspaces]
    }

    /// `[L, m]` codes of one head.
    pub fn head(&self, head: usize) -> &[u8] {
        let stride = self.seq_len * self.num_subspaces;
        &self.codes[head * stride..(head + 1) * stride]
    }

    /// Checks that the cache was built for `codebook` and holds in-range codes.
    pub fn check_against(&self, codebook: &Codebook) -> Result<()> {
        if self.num_subspaces != codebook.num_subspaces() {
            return Err(Error::DimensionMismatch {
                expected: codebook.num_subspaces(),
                found: self.num_subspaces,
            });
        }
        if let Some(index) = self
            .codes
            .iter()
            .position(|&c| c as usize >= codebook.num_centroids())
        {
            return Err(Error::CorruptCode {
                code: self.codes[index],
                index,
                num_centroids: codebook.num_centroids(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self, num_centroids: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.codes.len());
        out.extend_from_slice(&CODES_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for x in [
            self.head_count,
            self.seq_len,
            self.num_subspaces,
            num_centroids,
        ] {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.codebook_id.to_le_bytes());
        out.extend_from_slice(&self.codes);
        out
    }

    /// Parses a codes file; returns the cache and the recorded centroid count.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let header = read_header(bytes, CODES_MAGIC, 24)?;
        if bytes.len() < 32 {
            return Err(Error::MalformedHeader("codes header truncated".into()));
        }
        let (h, l, m, k) = (header[0], header[1], header[2], header[3]);
        let id = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let expected = 32 + h * l * m;
        if bytes.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected,
                found: bytes.len(),
            });
        }
        if let Some(index) = bytes[32..].iter().position(|&c| c as usize >= k) {
            return Err(Error::CorruptCode {
                code: bytes[32 + index],
                index,
                num_centroids: k,
            });
        }
        Ok((Self::from_codes(h, l, m, bytes[32..].to_vec(), id)?, k))
    }
}

/// Encodes every key of `keys` against `codebook`.
pub fn encode_keys(keys: &Tensor3, codebook: &Codebook) -> Result<CompressedKeyCache> {
    let [h, l, d] = keys.shape();
    if d != codebook.head_dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.head_dim(),
            found: d,
        });
    }
    if let Some(index) = keys.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: "keys",
            index,
        });
    }
    let m = codebook.num_subspaces();
    let mut codes = vec![0u8; h * l * m];
    codes
        .par_chunks_exact_mut(m)
        .zip(keys.as_slice().par_chunks_exact(d))
        .try_for_each(|(out, key)| encode_vector(key, codebook, out).map(|_| ()))?;
    CompressedKeyCache::from_codes(h, l, m, codes, codebook.id())
}

/// Concatenates the selected centroids back into `[H, L, d_k]` keys.
pub fn reconstruct(cache: &CompressedKeyCache, codebook: &Codebook) -> Result<Tensor3> {
    cache.check_against(codebook)?;
    let d_sub = codebook.sub_dim();
    let d = codebook.head_dim();
    let mut out = Tensor3::zeros([cache.head_count, cache.seq_len, d]);
    for (key, codes) in out
        .as_mut_slice()
        .chunks_exact_mut(d)
        .zip(cache.codes.chunks_exact(cache.num_subspaces))
    {
        for (i, (dst, &c)) in key.chunks_exact_mut(d_sub).zip(codes).enumerate() {
            dst.copy_from_slice(codebook.centroid(i, c as usize));
        }
    }
    Ok(out)
}

/// Mean squared per-element reconstruction error of `keys` under `codebook`.
pub fn quantization_mse(keys: &Tensor3, codebook: &Codebook) -> Result<f64> {
    let cache = encode_keys(keys, codebook)?;
    let recon = reconstruct(&cache, codebook)?;
    let sse: f64 = keys
        .as_slice()
        .iter()
        .zip(recon.as_slice())
        .map(|(&a, &b)| {
            let e = (a - b) as f64;
            e * e
        })
        .sum();
    Ok(sse / keys.as_slice().len() as f64)
}

/// Per-token storage accounting for a PQ configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub bytes_per_token_baseline: f64,
    pub bytes_per_token_compressed: f64,
    pub ratio: f64,
    /// Codebook storage with centroids counted as FP16.
    pub codebook_bytes: u64,
}

pub fn compression_stats(
    head_dim: usize,
    num_subspaces: usize,
    num_centroids: usize,
    baseline_bytes_per_dim: f64,
) -> Result<CompressionStats> {
    let config = PqConfig {
        num_subspaces,
        num_centroids,
        ..PqConfig::default()
    };
    let sub_dim = config.sub_dim(head_dim)?;
    if baseline_bytes_per_dim.is_nan() || baseline_bytes_per_dim <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "baseline bytes per dim must be positive, got {baseline_bytes_per_dim}"
        )));
    }
    let baseline = head_dim as f64 * baseline_bytes_per_dim;
    let compressed = num_subspaces as f64;
    Ok(CompressionStats {
        bytes_per_token_baseline: baseline,
        bytes_per_token_compressed: compressed,
        ratio: baseline / compressed,
        codebook_bytes: (num_subspaces * num_centroids * sub_dim * 2) as u64,
    })
}
