//! Desk-scale simulator for federated low-rank fine-tuning with
//! selective homomorphic encryption (SHE-LoRA).
//!
//! Clients hold LoRA adapters over a frozen base weight matrix. Each
//! round they score their adapter columns for sensitivity, bid an
//! affordable encryption subset to the server under order-preserving
//! codes, and the server negotiates a common column set `Res`. Clients
//! swap the negotiated columns to the right edge of their `A` factor,
//! encrypt only that slab, and upload the rest in the clear. The server
//! aggregates the plaintext and ciphertext parts column-aware, and each
//! client rebuilds a rank-`r` adapter from the merged result.
//!
//! Modules map onto the protocol stages:
//!
//! * [`linalg`]: dense matrices, deterministic one-sided Jacobi SVD,
//!   low-rank factoring, column permutation, padding, CSV persistence.
//! * [`sensitivity`]: weight-times-activation-norm column scores and
//!   budgeted subset selection.
//! * [`crypto`]: order-preserving encoding for bids and a pluggable,
//!   exact simulated HE backend with CKKS-style size/level accounting.
//! * [`client`]: device profiles, local training on a toy linear task,
//!   column swapping, chunked encryption, reparameterization.
//! * [`server`]: subset negotiation with coefficient optimization, and
//!   column-aware plaintext/ciphertext aggregation with SVD slicing.
//! * [`metrics`]: KDE mutual-information leakage, a reconstruction
//!   error lower bound, and permutation-noise distribution checks.
//! * [`orchestrator`]: experiment configs, non-IID partitioning, the
//!   round loop, and report emission.

pub mod client;
pub mod crypto;
pub mod linalg;
pub mod metrics;
pub mod orchestrator;
pub mod sensitivity;
pub mod server;
