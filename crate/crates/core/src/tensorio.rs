//! Attention dump container: binary format, loading, saving and synthetic generation.
//!
//! A dump holds the query, key and value tensors of one attention layer as
//! `[H, L, d_k]` f32 arrays. On disk (little-endian throughout):
//!
//! | bytes        | content                                          |
//! |--------------|--------------------------------------------------|
//! | 0..4         | magic `LKAT`                                     |
//! | 4..8         | version, u32 = 1                                 |
//! | 8            | dtype code, 0 = f32                              |
//! | 9            | causal flag, 0 or 1                              |
//! | 10..16       | reserved, zero                                   |
//! | 16..28       | H, L, d_k as u32                                 |
//! | 28..32       | tag length T, u32                                |
//! | 32..32+T     | UTF-8 source tag                                 |
//! | rest         | Q, K, V; each H·L·d_k f32, d_k fastest, H slowest |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const DUMP_MAGIC: [u8; 4] = *b"LKAT";
pub const DUMP_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const FIXED_HEADER_LEN: usize = 32;

/// Q/K/V tensors for one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub queries: Tensor3,
    pub keys: Tensor3,
    pub values: Tensor3,
    pub source_tag: String,
    pub causal: bool,
}

impl AttentionDump {
    /// Builds a dump after checking shape agreement and finiteness.
    pub fn new(
        queries: Tensor3,
        keys: Tensor3,
        values: Tensor3,
        source_tag: impl Into<String>,
        causal: bool,
    ) -> Result<Self> {
        let dump = Self {
            queries,
            keys,
            values,
            source_tag: source_tag.into(),
            causal,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn head_count(&self) -> usize {
        self.keys.heads()
    }

    pub fn seq_len(&self) -> usize {
        self.keys.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.keys.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.keys.shape();
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "all dimensions must be positive, got {shape:?}"
            )));
        }
        if self.queries.shape() != shape || self.values.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "Q {:?}, K {:?}, V {:?} must agree",
                self.queries.shape(),
                shape,
                self.values.shape()
            )));
        }
        for (name, t) in [
            ("queries", &self.queries),
            ("keys", &self.keys),
            ("values", &self.values),
        ] {
            if let Some(index) = t.first_non_finite() {
                return Err(Error::NonFinite {
                    tensor: name,
                    index,
                });
            }
        }
        Ok(())
    }

    /// Keeps the first `len` tokens of Q, K and V.
    pub fn truncate(&self, len: usize) -> Result<Self> {
        Ok(Self {
            queries: self.queries.truncate_rows(len)?,
            keys: self.keys.truncate_rows(len)?,
            values: self.values.truncate_rows(len)?,
            source_tag: self.source_tag.clone(),
            causal: self.causal,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let [h, l, d] = self.keys.shape();
        let tag = self.source_tag.as_bytes();
        let payload = 3 * h * l * d * 4;
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN + tag.len() + payload);
        out.extend_from_slice(&DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(u8::from(self.causal));
        out.extend_from_slice(&[0u8; 6]);
        for dim in [h, l, d] {
            out.extend_from_slice(&to_u32(dim, "dimension")?.to_le_bytes());
        }
        out.extend_from_slice(&to_u32(tag.len(), "tag length")?.to_le_bytes());
        out.extend_from_slice(tag);
        for t in [&self.queries, &self.keys, &self.values] {
            for x in t.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::MalformedHeader(format!(
                "file is {} bytes, shorter than the magic",
                bytes.len()
            )));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != DUMP_MAGIC {
            return Err(Error::BadMagic {
                expected: DUMP_MAGIC,
                found: magic,
            });
        }
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "header needs {FIXED_HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        let version = read_u32(bytes, 4);
        if version != DUMP_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes[8] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[8]));
        }
        let causal = match bytes[9] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::MalformedHeader(format!("causal flag {other}")));
            }
        };
        if bytes[10..16].iter().any(|&b| b != 0) {
            return Err(Error::MalformedHeader("reserved bytes not zero".into()));
        }
        let h = read_u32(bytes, 16) as usize;
        let l = read_u32(bytes, 20) as usize;
        let d = read_u32(bytes, 24) as usize;
        if h == 0 || l == 0 || d == 0 {
            return Err(Error::MalformedHeader(format!(
                "zero dimension in H={h}, L={l}, d_k={d}"
            )));
        }
        let tag_len = read_u32(bytes, 28) as usize;
        let tag_end = FIXED_HEADER_LEN
            .checked_add(tag_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::MalformedHeader("tag extends past end of file".into()))?;
        let source_tag = std::str::from_utf8(&bytes[FIXED_HEADER_LEN..tag_end])
            .map_err(|e| Error::MalformedHeader(format!("source tag is not UTF-8: {e}")))?
            .to_owned();

        let count = h
            .checked_mul(l)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
        let expected = count
            .checked_mul(12)
            .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
        let payload = &bytes[tag_end..];
        if payload.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected,
                found: payload.len(),
            });
        }
        let mut tensors = payload.chunks_exact(count * 4).map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Tensor3::from_vec([h, l, d], data)
        });
        let queries = tensors.next().unwrap()?;
        let keys = tensors.next().unwrap()?;
        let values = tensors.next().unwrap()?;
        Self::new(queries, keys, values, source_tag, causal)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::InvalidConfig(format!("{what} {x} exceeds u32")))
}

/// Writes `dump` to `path`. Non-finite entries are rejected before anything is written.
pub fn save_dump(dump: &AttentionDump, path: impl AsRef<Path>) -> Result<()> {
    let bytes = dump.to_bytes()?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_dump(path: impl AsRef<Path>) -> Result<AttentionDump> {
    AttentionDump::from_bytes(&fs::read(path)?)
}

/// Key distribution for synthetic dumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KeyDistribution {
    IsotropicGaussian,
    ClusteredGaussian { num_clusters: usize, spread: f32 },
}

impl Default for KeyDistribution {
    fn default() -> Self {
        Self::ClusteredGaussian {
            num_clusters: 64,
            spread: 0.3,
        }
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub head_count: usize,
    pub seq_len: usize,
    pub head_dim: usize,
    pub distribution: KeyDistribution,
    pub seed: u64,
    pub causal: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            head_count: 12,
            seq_len: 512,
            head_dim: 64,
            distribution: KeyDistribution::default(),
            seed: 0,
            causal: true,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.head_count == 0 || self.seq_len == 0 || self.head_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "H, L, d_k must be positive (got {}, {}, {})",
                self.head_count, self.seq_len, self.head_dim
            )));
        }
        if let KeyDistribution::ClusteredGaussian {
            num_clusters,
            spread,
        } = self.distribution
        {
            if num_clusters == 0 {
                return Err(Error::InvalidConfig("num_clusters must be >= 1".into()));
            }
            if !(spread > 0.0 && spread.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "spread must be positive and finite, got {spread}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn tag(&self) -> String {
        match self.distribution {
            KeyDistribution::IsotropicGaussian => format!("synthetic-gaussian-seed{}", self.seed),
            KeyDistribution::ClusteredGaussian {
                num_clusters,
                spread,
            } => format!(
                "synthetic-clustered-c{num_clusters}-s{spread}-seed{}",
                self.seed
            ),
        }
    }
}

/// Generates a dump whose tensors are a pure function of `spec`.
///
/// Queries and values are standard normal. Keys are standard normal for the
/// isotropic distribution; for the clustered one, `num_clusters` standard
/// normal centers are drawn once per dump (shared by all heads) and every key
/// is a uniformly chosen center plus `spread`-scaled normal noise.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<AttentionDump> {
    spec.validate()?;
    let shape = [spec.head_count, spec.seq_len, spec.head_dim];
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = |count: usize| -> Vec<f32> {
        (0..count)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f32>>()
    };

    let (queries, keys, values) = match spec.distribution {
        KeyDistribution::IsotropicGaussian => {
            let q = normal(n);
            let k = normal(n);
            let v = normal(n);
            (q, k, v)
        }
        KeyDistribution::ClusteredGaussian {
            num_clusters,
            spread,
        } => {
            let centers = normal(num_clusters * spec.head_dim);
            let q = normal(n);
            let noise = normal(n);
            let v = normal(n);
            let mut pick_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
            let pick = Uniform::new(0, num_clusters);
            let mut k = noise;
            for key in k.chunks_exact_mut(spec.head_dim) {
                let c = pick.sample(&mut pick_rng);
                let center = &centers[c * spec.head_dim..(c + 1) * spec.head_dim];
                for (x, &mu) in key.iter_mut().zip(center) {
                    *x = mu + spread * *x;
                }
            }
            (q, k, v)
        }
    };

    AttentionDump::new(
        Tensor3::from_vec(shape, queries)?,
        Tensor3::from_vec(shape, keys)?,
        Tensor3::from_vec(shape, values)?,
        spec.tag(),
        spec.causal,
    )
}
