//! Keyed order-preserving encoding for sensitivity bids.
//!
//! Values are quantized onto a fixed-point grid and mapped through a
//! keyed, strictly increasing jump function: every quantized step adds
//! a positive pseudo-random gap, realized lazily as
//! `code(q) = (q << s) | prf(key, q)` with `s = 64 - domain_bits`.
//! Order comparisons on codes therefore agree with order comparisons
//! on values, while the gap pattern depends on the key.

use serde::{Deserialize, Serialize};

use super::{splitmix64, CryptoError};

/// Default quantization precision in bits.
pub const DEFAULT_DOMAIN_BITS: u32 = 40;

/// Shared symmetric key for the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpeKey {
    seed: u64,
    domain_bits: u32,
}

impl OpeKey {
    pub fn new(seed: u64, domain_bits: u32) -> Result<Self, CryptoError> {
        if domain_bits == 0 || domain_bits > 63 {
            return Err(CryptoError::InvalidParams(format!(
                "domain_bits {domain_bits} outside 1..=63"
            )));
        }
        Ok(OpeKey { seed, domain_bits })
    }

    pub fn with_default_bits(seed: u64) -> Self {
        OpeKey {
            seed,
            domain_bits: DEFAULT_DOMAIN_BITS,
        }
    }

    pub fn domain_bits(&self) -> u32 {
        self.domain_bits
    }
}

/// An order-comparable code. The numeric value is meaningful only as
/// an ordering (and, approximately, as a monotone transform of the
/// input); it is not the input itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpeCode(pub u64);

impl OpeCode {
    /// Code magnitude as a float, for proxy arithmetic on the server.
    pub fn as_f64(&self) -> f64 {
        self.0 as f64
    }
}

/// Maps a finite `f64` to a `u64` whose unsigned order matches the
/// numeric order of the floats. `-0.0` is canonicalized to `+0.0`
/// first so equal values share a code.
fn monotone_bits(value: f64) -> u64 {
    let v = if value == 0.0 { 0.0 } else { value };
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits ^ (1 << 63)
    }
}

/// Encodes a batch of values under the shared key.
pub fn ope_encode(values: &[f64], key: &OpeKey) -> Result<Vec<OpeCode>, CryptoError> {
    let shift = 64 - key.domain_bits;
    let low_mask = (1u64 << shift) - 1;
    values
        .iter()
        .map(|v| {
            if !v.is_finite() {
                return Err(CryptoError::NonFinite);
            }
            let q = monotone_bits(*v) >> shift;
            let jump = splitmix64(key.seed ^ splitmix64(q)) & low_mask;
            Ok(OpeCode((q << shift) | jump))
        })
        .collect()
}
