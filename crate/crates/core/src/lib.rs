//! Product-quantized KV-cache key compression with lookup-table attention scoring.
//!
//! Keys are split into `m` subspaces, each quantized to one byte against a
//! k-means codebook ([`pq`]). Attention scores are then computed from per-query
//! lookup tables without reconstructing keys ([`adc`]). [`scalarquant`] holds
//! INT8/INT4 baselines, [`metrics`] the fidelity metrics, and [`bench`] the
//! experiment harness behind the `lookat` CLI.

pub mod adc;
pub mod attention;
pub mod bench;
pub mod error;
pub mod metrics;
pub mod pq;
pub mod scalarquant;
pub mod tensor;
pub mod tensorio;

pub use adc::{adc_scores, build_luts, lookat_attention, LookupTableSet};
pub use attention::{reference_attention, AttentionOutput};
pub use error::{Error, Result};
pub use metrics::FidelityReport;
pub use pq::{
    compression_stats, encode_keys, reconstruct, train_codebook, Codebook, CompressedKeyCache,
    CompressionStats, PqConfig,
};
pub use scalarquant::{dequantize, quantize_keys, scalar_attention, BitWidth, ScalarQuantizedKeys};
pub use tensor::Tensor3;
pub use tensorio::{
    generate_synthetic, load_dump, save_dump, AttentionDump, KeyDistribution, SynthSpec,
};
