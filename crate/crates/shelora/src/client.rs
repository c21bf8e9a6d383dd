//! Client-side protocol state machine.
//!
//! A client trains its low-rank adapter on the toy regression task,
//! bids for encryption columns with order-preserving codes, permutes
//! the negotiated columns to the right edge, encrypts that tail in
//! chunked blocks, and later merges the server's sliced plaintext
//! factors with its decrypted ciphertext slab back into a rank-r
//! adapter.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    ope_encode, CipherBlockList, CryptoError, HePublicKey, HeSecretKey, OpeKey,
};
use crate::linalg::{LinalgError, Matrix, Placement};
use crate::sensitivity::{select_subset, ChannelScores, SensitivityError};
use crate::server::{PlainFactors, SensitivityBid};

/// Loss ceiling beyond which training is treated as diverged.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Standard deviation of the adapter A initialization.
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("training diverged at step {step}: loss {loss:.3e}")]
    Diverged { step: usize, loss: f64 },
    #[error("update wire format: {0}")]
    Wire(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

// ── Device and adapter state ─────────────────────────────────────────

/// Hardware class of a client, after Table 1 of the experiment setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub type_id: u32,
    /// LoRA rank this device trains.
    pub rank: usize,
    /// Fraction of columns the device can afford to encrypt.
    pub gamma: f64,
    /// Informational capability label, unused by the protocol.
    pub gflops: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.rank == 0 {
            return Err(ClientError::Validation("rank must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || self.gamma.is_nan() {
            return Err(ClientError::Validation(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// The trainable pair `(B, A)` with `delta = B * A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    b: Matrix,
    a: Matrix,
    rank: usize,
}

impl AdapterPair {
    pub fn new(b: Matrix, a: Matrix) -> Result<Self, ClientError> {
        if b.cols() != a.rows() {
            return Err(ClientError::Validation(format!(
                "b is {}x{} but a is {}x{}",
                b.rows(),
                b.cols(),
                a.rows(),
                a.cols()
            )));
        }
        let rank = b.cols();
        Ok(AdapterPair { b, a, rank })
    }

    /// Fresh adapter: `B = 0`, `A ~ N(0, 0.02^2)`, so the initial
    /// update `BA` is exactly zero.
    pub fn init(m: usize, n: usize, rank: usize, seed: u64) -> Result<Self, ClientError> {
        if rank == 0 {
            return Err(ClientError::Validation("rank must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut data = Vec::with_capacity(rank * n);
        for _ in 0..rank * n {
            data.push(normal.sample(&mut rng));
        }
        Ok(AdapterPair {
            b: Matrix::zeros(m, rank),
            a: Matrix::new(rank, n, data)?,
            rank,
        })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// The weight update `B * A`.
    pub fn delta(&self) -> Matrix {
        self.b.matmul(&self.a).expect("shapes fixed by invariant")
    }
}

// ── Local training on the toy task ───────────────────────────────────

/// Local samples: inputs as columns of `x` (`n x s`) and targets as
/// columns of `y` (`m x s`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self, ClientError> {
        if x.cols() != y.cols() {
            return Err(ClientError::Validation(format!(
                "{} inputs but {} targets",
                x.cols(),
                y.cols()
            )));
        }
        if x.cols() == 0 {
            return Err(ClientError::Validation("dataset is empty".into()));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }
}

/// Mean squared residual of `y = (W0 + BA) x`, halved.
pub fn task_loss(adapter: &AdapterPair, w0: &Matrix, data: &Dataset) -> Result<f64, ClientError> {
    let pred = w0.add(&adapter.delta())?.matmul(&data.x)?;
    let residual = pred.sub(&data.y)?;
    let s = data.len() as f64;
    Ok(residual.frobenius_norm().powi(2) / (2.0 * s))
}

/// Full-batch gradient descent on `(B, A)` against the frozen `w0`.
///
/// The squared loss above is differentiated exactly; `steps` zero or a
/// zero learning rate return the adapter unchanged. A loss above the
/// divergence limit (or a non-finite one) aborts with the offending
/// step in the error.
pub fn local_train(
    adapter: &AdapterPair,
    w0: &Matrix,
    data: &Dataset,
    steps: usize,
    lr: f64,
) -> Result<AdapterPair, ClientError> {
    if w0.rows() != data.y.rows() || w0.cols() != data.x.rows() {
        return Err(ClientError::Validation(format!(
            "w0 is {}x{} but data needs {}x{}",
            w0.rows(),
            w0.cols(),
            data.y.rows(),
            data.x.rows()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(ClientError::Validation(format!("bad learning rate {lr}")));
    }
    let mut b = adapter.b.clone();
    let mut a = adapter.a.clone();
    let s = data.len() as f64;
    let w0x = w0.matmul(&data.x)?;
    let xt = data.x.transpose();
    for step in 0..steps {
        let ax = a.matmul(&data.x)?;
        let residual = w0x.add(&b.matmul(&ax)?)?.sub(&data.y)?;
        let loss = residual.frobenius_norm().powi(2) / (2.0 * s);
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(ClientError::Diverged { step, loss });
        }
        let grad_b = residual.matmul(&ax.transpose())?.scale(1.0 / s);
        let grad_a = b.transpose().matmul(&residual)?.matmul(&xt)?.scale(1.0 / s);
        b = b.sub(&grad_b.scale(lr))?;
        a = a.sub(&grad_a.scale(lr))?;
    }
    AdapterPair::new(b, a)
}

// ── Bidding ──────────────────────────────────────────────────────────

/// Selects the top `floor(n * gamma)` columns by channel importance
/// and encodes their raw scores with the shared order-preserving key.
pub fn build_bid(
    client_id: u64,
    scores: &ChannelScores,
    profile: &DeviceProfile,
    key: &OpeKey,
) -> Result<SensitivityBid, ClientError> {
    profile.validate()?;
    let selection = select_subset(scores, profile.gamma)?;
    let raw: Vec<f64> = selection
        .columns
        .iter()
        .map(|&j| scores.scores()[j])
        .collect();
    let codes = ope_encode(&raw, key)?;
    Ok(SensitivityBid {
        client_id,
        rank: profile.rank,
        k: selection.k,
        columns: selection.columns,
        codes,
    })
}

// ── Column swapping ──────────────────────────────────────────────────

/// The permutation that clusters the negotiated columns at the right
/// edge, in ascending original index, with its inverse for undoing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapPlan {
    perm: Vec<usize>,
    inverse: Vec<usize>,
    n_plain: usize,
    encrypted_columns: Vec<usize>,
}

impl SwapPlan {
    /// Builds the plan for `n` columns with `res` the agreed encrypted
    /// set. `res` entries must be unique and in range; order does not
    /// matter, the rightmost region is always ascending.
    pub fn new(n: usize, res: &[usize]) -> Result<Self, ClientError> {
        let unique: BTreeSet<usize> = res.iter().copied().collect();
        if unique.len() != res.len() {
            return Err(ClientError::Validation(
                "duplicate encrypted column".into(),
            ));
        }
        if let Some(&bad) = unique.iter().find(|&&c| c >= n) {
            return Err(ClientError::Validation(format!(
                "encrypted column {bad} out of range for {n} columns"
            )));
        }
        let encrypted: Vec<usize> = unique.into_iter().collect();
        let mut perm: Vec<usize> = (0..n).filter(|c| !encrypted.contains(c)).collect();
        let n_plain = perm.len();
        perm.extend_from_slice(&encrypted);
        let mut inverse = vec![0usize; n];
        for (pos, &orig) in perm.iter().enumerate() {
            inverse[orig] = pos;
        }
        Ok(SwapPlan {
            perm,
            inverse,
            n_plain,
            encrypted_columns: encrypted,
        })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// Count of left (plaintext) columns.
    pub fn n_plain(&self) -> usize {
        self.n_plain
    }

    /// The encrypted set, ascending.
    pub fn encrypted_columns(&self) -> &[usize] {
        &self.encrypted_columns
    }
}

/// Reorders the columns of `A` so the encrypted set sits rightmost.
/// `B` is untouched, since the permutation acts on output columns.
pub fn apply_swap(adapter: &AdapterPair, plan: &SwapPlan) -> Result<AdapterPair, ClientError> {
    let a = adapter.a.permute_cols(plan.perm())?;
    AdapterPair::new(adapter.b.clone(), a)
}

/// Inverse of [`apply_swap`].
pub fn undo_swap(adapter: &AdapterPair, plan: &SwapPlan) -> Result<AdapterPair, ClientError> {
    let a = adapter.a.permute_cols(plan.inverse())?;
    AdapterPair::new(adapter.b.clone(), a)
}

// ── Selective encryption ─────────────────────────────────────────────

/// One round's uplink: `B` and the left part of `A` in the clear, the
/// rightmost `k` columns of `A` as cipher blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u64,
    pub round: u64,
    pub b_plain: Matrix,
    pub a_plain: Matrix,
    pub cipher_blocks: CipherBlockList,
    pub k: usize,
}

/// Splits a post-swap adapter at `n - k` and encrypts the tail.
pub fn encrypt_update(
    client_id: u64,
    round: u64,
    adapter: &AdapterPair,
    k: usize,
    chunk: usize,
    pk: &HePublicKey,
) -> Result<ClientUpdate, ClientError> {
    let n = adapter.a.cols();
    if k > n {
        return Err(ClientError::Validation(format!(
            "cannot encrypt {k} of {n} columns"
        )));
    }
    let a_plain = adapter.a.col_range(0, n - k)?;
    let cipher_blocks = CipherBlockList::encrypt_tail(&adapter.a, k, chunk, pk)?;
    Ok(ClientUpdate {
        client_id,
        round,
        b_plain: adapter.b.clone(),
        a_plain,
        cipher_blocks,
        k,
    })
}

impl ClientUpdate {
    /// Total modeled ciphertext bytes of this update.
    pub fn cipher_bytes(&self) -> u64 {
        self.cipher_blocks.total_byte_size()
    }

    /// Wire form: five u64 header fields (client id, round, rank, n,
    /// k), then three length-prefixed sections holding the `B` CSV,
    /// the plaintext `A` CSV, and the cipher block stream. All integers
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let rank = self.b_plain.cols() as u64;
        let n = (self.a_plain.cols() + self.k) as u64;
        let mut out = Vec::new();
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&rank.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&(self.k as u64).to_le_bytes());
        for section in [
            self.b_plain.to_csv_string().into_bytes(),
            self.a_plain.to_csv_string().into_bytes(),
            self.cipher_blocks.to_bytes(),
        ] {
            out.extend_from_slice(&(section.len() as u64).to_le_bytes());
            out.extend_from_slice(&section);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClientError> {
        let take_u64 = |bytes: &[u8], at: usize| -> Result<u64, ClientError> {
            bytes
                .get(at..at + 8)
                .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
                .ok_or_else(|| ClientError::Wire("truncated header".into()))
        };
        let client_id = take_u64(bytes, 0)?;
        let round = take_u64(bytes, 8)?;
        let rank = take_u64(bytes, 16)? as usize;
        let n = take_u64(bytes, 24)? as usize;
        let k = take_u64(bytes, 32)? as usize;
        let mut at = 40;
        let mut sections: Vec<&[u8]> = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = take_u64(bytes, at)? as usize;
            at += 8;
            let body = bytes
                .get(at..at + len)
                .ok_or_else(|| ClientError::Wire("truncated section".into()))?;
            at += len;
            sections.push(body);
        }
        let as_text = |body: &[u8]| -> Result<String, ClientError> {
            String::from_utf8(body.to_vec()).map_err(|e| ClientError::Wire(e.to_string()))
        };
        let b_plain = Matrix::from_csv_str(&as_text(sections[0])?)?;
        let a_plain = Matrix::from_csv_str(&as_text(sections[1])?)?;
        let (cipher_blocks, _) = CipherBlockList::from_bytes(sections[2])?;
        if b_plain.cols() != rank {
            return Err(ClientError::Wire(format!(
                "header rank {rank} but B has {} columns",
                b_plain.cols()
            )));
        }
        if a_plain.cols() + k != n {
            return Err(ClientError::Wire(format!(
                "header n {n} but sections cover {}",
                a_plain.cols() + k
            )));
        }
        if cipher_blocks.covered != k {
            return Err(ClientError::Wire(format!(
                "header k {k} but blocks cover {}",
                cipher_blocks.covered
            )));
        }
        Ok(ClientUpdate {
            client_id,
            round,
            b_plain,
            a_plain,
            cipher_blocks,
            k,
        })
    }
}

// ── Reparameterization ───────────────────────────────────────────────

/// Merges the downlink into a fresh rank-`rank` adapter.
///
/// The sliced plaintext factors become `(B_p, A_p)` via the square
/// root of the singular values; the ciphertext slab is decrypted and
/// factored at full rank into `(B_c, A_c)`. Both right factors are
/// zero-padded to the full width (plain part left-anchored, cipher
/// part right-anchored), the block concatenation `[B_p B_c][A_p; A_c]`
/// is formed, and its best rank-`rank` factorization is taken. The
/// final `A` has its columns restored to original positions.
pub fn reparameterize(
    factors: &PlainFactors,
    cipher: &CipherBlockList,
    sk: &HeSecretKey,
    plan: &SwapPlan,
    rank: usize,
) -> Result<AdapterPair, ClientError> {
    let n = plan.n();
    let m = factors.u.rows();
    if factors.vt.cols() > n {
        return Err(ClientError::Validation(format!(
            "plain factors cover {} of {n} columns",
            factors.vt.cols()
        )));
    }
    if cipher.covered > n {
        return Err(ClientError::Validation(format!(
            "cipher covers {} of {n} columns",
            cipher.covered
        )));
    }
    if rank == 0 {
        return Err(ClientError::Validation("rank must be at least 1".into()));
    }

    let rp = factors.sigma.len();
    let mut b_parts: Vec<Matrix> = Vec::with_capacity(2);
    let mut a_parts: Vec<Matrix> = Vec::with_capacity(2);

    if rp > 0 {
        let mut b_p = Matrix::zeros(m, rp);
        let mut a_p = Matrix::zeros(rp, factors.vt.cols());
        for t in 0..rp {
            let root = factors.sigma[t].sqrt();
            for i in 0..m {
                b_p.set(i, t, factors.u.get(i, t) * root);
            }
            for j in 0..factors.vt.cols() {
                a_p.set(t, j, factors.vt.get(t, j) * root);
            }
        }
        b_parts.push(b_p);
        a_parts.push(a_p.zero_pad(rp, n, Placement::Left)?);
    }

    if cipher.covered > 0 {
        let slab = cipher.decrypt_tail(sk)?;
        if slab.rows() != m {
            return Err(ClientError::Validation(format!(
                "cipher slab has {} rows, plain factors have {m}",
                slab.rows()
            )));
        }
        let rc = slab.rows().min(slab.cols());
        let lr = slab.low_rank_factor(rc)?;
        b_parts.push(lr.b);
        a_parts.push(lr.a.zero_pad(rc, n, Placement::Right)?);
    }

    let (b_g, a_g) = match (b_parts.len(), a_parts.len()) {
        (0, 0) => (Matrix::zeros(m, 0), Matrix::zeros(0, n)),
        (1, 1) => (b_parts.remove(0), a_parts.remove(0)),
        _ => (
            b_parts[0].hstack(&b_parts[1])?,
            a_parts[0].vstack(&a_parts[1])?,
        ),
    };

    let merged = b_g.matmul(&a_g)?;
    let lr = merged.low_rank_factor(rank)?;
    if lr.clamped {
        log::warn!(
            "rank {rank} clamped to {} for a {m}x{n} reparameterization",
            lr.rank
        );
    }
    // Keep the adapter exactly rank wide; missing directions are zero.
    let b_hat = lr.b.zero_pad(m, rank, Placement::Left)?;
    let a_hat = lr.a.zero_pad(rank, n, Placement::Top)?;
    let restored = a_hat.permute_cols(plan.inverse())?;
    AdapterPair::new(b_hat, restored)
}
