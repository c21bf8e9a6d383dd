//! Server-side protocol stages: encryption-subset negotiation over
//! order-preserving bids, and column-aware aggregation of the
//! plaintext and ciphertext halves of client updates.

pub mod aggregation;
pub mod negotiation;

pub use aggregation::{
    aggregate_cipher, aggregate_plain, materialize_update, svd_and_slice, truncate_cipher,
    AggregatedCipher, AggregatedPlain, PlainFactors,
};
pub use negotiation::{
    column_lists, coverage_and_risk, group_clients_list, negotiate, negotiate_with,
    objective_score, optimize_coefficients, NegotiationOptions, NegotiationResult,
    SelectionContext, SensitivityBid,
};

use thiserror::Error;

use crate::crypto::CryptoError;
use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
