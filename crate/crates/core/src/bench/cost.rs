//! Analytic per-query FLOP and bandwidth accounting for key scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalarquant::BitWidth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelResult {
    pub method: String,
    /// Full multiply-add count, one per scalar product term.
    pub flops_per_query: u64,
    /// Count with each lookup-table entry charged as a single operation.
    /// Only meaningful for the lookup path.
    pub flops_per_query_entry_convention: Option<u64>,
    pub bytes_loaded_per_query: u64,
    pub bytes_per_key: f64,
    pub assumptions: String,
}

fn positive(name: &str, x: usize) -> Result<u64> {
    if x == 0 {
        return Err(Error::InvalidConfig(format!("{name} must be positive")));
    }
    Ok(x as u64)
}

/// Standard dot-product scoring against FP keys versus lookup-and-sum over
/// `m`-byte codes, for one query against `seq_len` cached keys.
pub fn cost_model(
    seq_len: usize,
    head_dim: usize,
    num_subspaces: usize,
    num_centroids: usize,
    bytes_per_key_dim: usize,
) -> Result<(CostModelResult, CostModelResult)> {
    let l = positive("L", seq_len)?;
    let d = positive("d_k", head_dim)?;
    let m = positive("m", num_subspaces)?;
    let k = positive("K", num_centroids)?;
    let b = positive("bytes per key dim", bytes_per_key_dim)?;
    if !head_dim.is_multiple_of(num_subspaces) {
        return Err(Error::SubspaceMismatch {
            head_dim,
            num_subspaces,
        });
    }
    let d_sub = d / m;

    let standard = CostModelResult {
        method: "standard".into(),
        flops_per_query: l * d,
        flops_per_query_entry_convention: None,
        bytes_loaded_per_query: l * d * b,
        bytes_per_key: (d * b) as f64,
        assumptions: format!("L*d_k multiply-adds; every key loaded at {b} B/dim"),
    };
    let lookat = CostModelResult {
        method: format!("lookat-{m}"),
        flops_per_query: m * k * d_sub + l * m,
        flops_per_query_entry_convention: Some(m * k + l * m),
        bytes_loaded_per_query: l * m,
        bytes_per_key: m as f64,
        assumptions: format!(
            "table build m*K*d_sub = {} MACs (or m*K = {} entries), then L*m lookups; \
             m one-byte codes per key; codebook ({} B as FP16) assumed resident",
            m * k * d_sub,
            m * k,
            m * k * d_sub * 2
        ),
    };
    Ok((standard, lookat))
}

/// Load-dequantize-matmul scoring with packed `b`-bit keys.
pub fn scalar_cost(
    seq_len: usize,
    head_dim: usize,
    bit_width: BitWidth,
) -> Result<CostModelResult> {
    let l = positive("L", seq_len)?;
    let d = positive("d_k", head_dim)?;
    let bits = bit_width.bits() as u64;
    Ok(CostModelResult {
        method: format!("int{bits}"),
        flops_per_query: 2 * l * d,
        flops_per_query_entry_convention: None,
        bytes_loaded_per_query: (l * d * bits).div_ceil(8),
        bytes_per_key: (d * bits) as f64 / 8.0,
        assumptions: "L*d_k dequantize multiplies plus L*d_k multiply-adds".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configuration() {
        let (std, lk) = cost_model(512, 64, 4, 256, 2).unwrap();
        assert_eq!(std.flops_per_query, 32_768);
        assert_eq!(std.bytes_loaded_per_query, 65_536);
        assert_eq!(lk.flops_per_query_entry_convention, Some(3_072));
        assert_eq!(lk.flops_per_query, 4 * 256 * 16 + 512 * 4);
        assert_eq!(lk.bytes_loaded_per_query, 512 * 4);
        assert_eq!(std.bytes_per_key / lk.bytes_per_key, 32.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(cost_model(0, 64, 4, 256, 2).is_err());
        assert!(cost_model(512, 64, 5, 256, 2).is_err());
    }

    #[test]
    fn scalar_charges_dequantize() {
        let c = scalar_cost(512, 64, BitWidth::Int4).unwrap();
        assert_eq!(c.bytes_loaded_per_query, 512 * 32);
        assert_eq!(c.flops_per_query, 2 * 32_768);
    }
}
