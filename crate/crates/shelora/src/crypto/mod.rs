//! Cryptographic primitives for the protocol, in simulation form.
//!
//! Two pieces live here: an order-preserving encoding used by clients
//! to bid column sensitivities without revealing magnitudes, and a
//! homomorphic-encryption seam with one exact simulated backend that
//! mirrors CKKS-style packing, size, and level accounting.

pub mod he;
pub mod ope;

pub use he::{
    decrypt_block, encrypt_block, he_add, he_keygen, he_plain_mask_mul, he_plain_matmul,
    CipherBlock, CipherBlockList, HeBackend, HeParams, HePublicKey, HeSecretKey,
    SimulatedBackend,
};
pub use ope::{ope_encode, OpeCode, OpeKey};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CryptoError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("capacity exceeded: {needed} values do not fit {slots} slots")]
    Capacity { needed: usize, slots: usize },
    #[error("incompatible operands: {0}")]
    Incompatible(String),
    #[error("multiplicative depth exhausted")]
    DepthExhausted,
    #[error("ciphertext does not match this key")]
    WrongKey,
    #[error("non-finite input value")]
    NonFinite,
    #[error("wire format: {0}")]
    Wire(String),
}

/// 64-bit FNV-1a, used for stable parameter fingerprints and the
/// deterministic noise stream. Not cryptographic; this is a simulator.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64 step, the workhorse PRF for key tokens and OPE jumps.
pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
