//! Symmetric per-tensor INT8 / INT4 key quantization baselines.
//!
//! Keys go through the full load, dequantize, matmul pipeline: the quantized
//! codes are expanded back to floats before the ordinary dot-product scores.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_with_keys, AttentionOutput};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use crate::tensorio::AttentionDump;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitWidth {
    Int4,
    Int8,
}

impl BitWidth {
    pub fn bits(self) -> u32 {
        match self {
            Self::Int4 => 4,
            Self::Int8 => 8,
        }
    }

    /// Largest code magnitude used by the scale, `2^(b-1) - 1`.
    pub fn max_code(self) -> i32 {
        (1 << (self.bits() - 1)) - 1
    }

    pub fn min_code(self) -> i32 {
        -(1 << (self.bits() - 1))
    }
}

impl TryFrom<u32> for BitWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            4 => Ok(Self::Int4),
            8 => Ok(Self::Int8),
            other => Err(Error::InvalidConfig(format!(
                "bit width must be 4 or 8, got {other}"
            ))),
        }
    }
}

/// Integer codes plus a single scale for the whole key tensor.
///
/// INT8 codes occupy one byte each; INT4 codes are packed two per byte, low
/// nibble first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQuantizedKeys {
    packed: Vec<u8>,
    shape: [usize; 3],
    pub scale: f64,
    pub bit_width: BitWidth,
}

impl ScalarQuantizedKeys {
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn code(&self, index: usize) -> i8 {
        match self.bit_width {
            BitWidth::Int8 => self.packed[index] as i8,
            BitWidth::Int4 => {
                let byte = self.packed[index / 2];
                let nibble = if index.is_multiple_of(2) {
                    byte & 0x0f
                } else {
                    byte >> 4
                };
                ((nibble << 4) as i8) >> 4
            }
        }
    }

    pub fn codes(&self) -> Vec<i8> {
        (0..self.len()).map(|i| self.code(i)).collect()
    }
}

fn pack(codes: &[i8], bit_width: BitWidth) -> Vec<u8> {
    match bit_width {
        BitWidth::Int8 => codes.iter().map(|&c| c as u8).collect(),
        BitWidth::Int4 => codes
            .chunks(2)
            .map(|pair| {
                let lo = pair[0] as u8 & 0x0f;
                let hi = pair.get(1).map_or(0, |&c| c as u8 & 0x0f);
                lo | (hi << 4)
            })
            .collect(),
    }
}

/// `scale = max|K| / (2^(b-1) - 1)`, codes `round(K / scale)` with ties away
/// from zero. An all-zero tensor gets scale 1.
pub fn quantize_keys(keys: &Tensor3, bit_width: BitWidth) -> Result<ScalarQuantizedKeys> {
    if let Some(index) = keys.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: "keys",
            index,
        });
    }
    let max_abs = keys.as_slice().iter().fold(0.0f32, |m, &x| m.max(x.abs()));
    let scale = if max_abs > 0.0 {
        max_abs as f64 / bit_width.max_code() as f64
    } else {
        1.0
    };
    let (lo, hi) = (bit_width.min_code() as f64, bit_width.max_code() as f64);
    let codes: Vec<i8> = keys
        .as_slice()
        .iter()
        .map(|&x| (x as f64 / scale).round().clamp(lo, hi) as i8)
        .collect();
    Ok(ScalarQuantizedKeys {
        packed: pack(&codes, bit_width),
        shape: keys.shape(),
        scale,
        bit_width,
    })
}

pub fn dequantize(sq: &ScalarQuantizedKeys) -> Tensor3 {
    let data = (0..sq.len())
        .map(|i| (sq.code(i) as f64 * sq.scale) as f32)
        .collect();
    Tensor3::from_vec(sq.shape, data).expect("shape matches code count")
}

/// Reference attention run on dequantized keys with the original Q and V.
pub fn scalar_attention(dump: &AttentionDump, sq: &ScalarQuantizedKeys) -> Result<AttentionOutput> {
    if sq.shape != dump.keys.shape() {
        return Err(Error::ShapeMismatch(format!(
            "quantized keys {:?} vs dump {:?}",
            sq.shape,
            dump.keys.shape()
        )));
    }
    attention_with_keys(dump, &dequantize(sq))
}

/// Per-token key storage for a scalar scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarStorage {
    /// Physical bytes with codes packed at `b` bits per dimension.
    pub packed_bytes_per_token: f64,
    /// Bytes per token under the nominal ratio `64 / b` against FP16, which is
    /// how INT8/INT4 are commonly tabulated next to PQ (16 B and 8 B at d_k = 64).
    pub nominal_bytes_per_token: f64,
    pub nominal_ratio: f64,
}

pub fn scalar_storage(head_dim: usize, bit_width: BitWidth) -> ScalarStorage {
    let b = bit_width.bits() as f64;
    let d = head_dim as f64;
    let nominal_ratio = 64.0 / b;
    ScalarStorage {
        packed_bytes_per_token: d * b / 8.0,
        nominal_bytes_per_token: 2.0 * d / nominal_ratio,
        nominal_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: Vec<f32>) -> Tensor3 {
        let n = data.len();
        Tensor3::from_vec([1, 1, n], data).unwrap()
    }

    #[test]
    fn zero_tensor_degenerate_rule() {
        let sq = quantize_keys(&t(vec![0.0; 7]), BitWidth::Int4).unwrap();
        assert_eq!(sq.scale, 1.0);
        assert!(sq.codes().iter().all(|&c| c == 0));
    }

    #[test]
    fn max_element_hits_top_code_and_round_trips() {
        for m in [0.37f32, 1.0, 3.3, 1234.5, 1e-3] {
            let sq = quantize_keys(&t(vec![m, -0.1 * m, 0.2 * m]), BitWidth::Int8).unwrap();
            assert_eq!(sq.code(0), 127);
            assert_eq!(dequantize(&sq).as_slice()[0], m);
        }
    }

    #[test]
    fn int4_unit_lattice() {
        let sq = quantize_keys(&t([-1.0f32, 1.0].repeat(5)), BitWidth::Int4).unwrap();
        assert!((sq.scale - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(sq.codes(), [-7i8, 7].repeat(5));
        assert_eq!(dequantize(&sq).as_slice(), &[-1.0f32, 1.0].repeat(5)[..]);
    }

    #[test]
    fn int4_packing_low_nibble_first() {
        let sq = quantize_keys(&t(vec![7.0, -7.0, 3.0]), BitWidth::Int4).unwrap();
        assert_eq!(sq.packed(), &[0x97, 0x03]);
        assert_eq!(sq.codes(), vec![7, -7, 3]);
    }

    #[test]
    fn zero_code_is_zero() {
        let sq = quantize_keys(&t(vec![0.0, 5.0]), BitWidth::Int8).unwrap();
        assert_eq!(sq.code(0), 0);
        assert_eq!(dequantize(&sq).as_slice()[0], 0.0);
    }

    #[test]
    fn bit_width_parse() {
        assert_eq!(BitWidth::try_from(8).unwrap(), BitWidth::Int8);
        assert!(BitWidth::try_from(2).is_err());
        assert_eq!(BitWidth::Int4.min_code(), -8);
    }

    #[test]
    fn storage_accounting() {
        let s8 = scalar_storage(64, BitWidth::Int8);
        assert_eq!(s8.packed_bytes_per_token, 64.0);
        assert_eq!((s8.nominal_bytes_per_token, s8.nominal_ratio), (16.0, 8.0));
        let s4 = scalar_storage(64, BitWidth::Int4);
        assert_eq!(s4.packed_bytes_per_token, 32.0);
        assert_eq!((s4.nominal_bytes_per_token, s4.nominal_ratio), (8.0, 16.0));
    }
}
