//! Homomorphic-encryption seam with an exact simulated backend.
//!
//! The backend interface is the six operations the protocol needs:
//! keygen, encrypt, add, plain-mask multiply, plain matrix multiply,
//! and decrypt. [`SimulatedBackend`] implements them with exact `f64`
//! arithmetic on an opaque payload while faithfully modeling the parts
//! of a CKKS-style scheme that shape the protocol: slot capacity,
//! ciphertext byte size, multiplicative depth, and key binding.
//!
//! Size model: a block always occupies
//! `2 * poly_degree * sum(moduli_bits) / 8` bytes regardless of how
//! many slots are in use, and a block packs at most
//! `slots = poly_degree / 2` values. Every plaintext multiplication
//! consumes one level; a fresh block starts at `moduli_bits.len() - 1`.

use serde::{Deserialize, Serialize};

use super::{fnv1a64, splitmix64, CryptoError};
use crate::linalg::Matrix;

/// Scheme parameters for the simulated backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeParams {
    /// Ring dimension; must be a power of two, at least 2048.
    pub poly_degree: usize,
    /// Bit sizes of the modulus chain; length fixes the level budget.
    pub moduli_bits: Vec<u32>,
    /// Optional uniform relative error injected at decryption.
    #[serde(default)]
    pub noise_epsilon: f64,
}

impl HeParams {
    pub fn new(poly_degree: usize, moduli_bits: Vec<u32>) -> Result<Self, CryptoError> {
        let params = HeParams {
            poly_degree,
            moduli_bits,
            noise_epsilon: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), CryptoError> {
        if self.poly_degree < 2048 || !self.poly_degree.is_power_of_two() {
            return Err(CryptoError::InvalidParams(format!(
                "poly_degree {} must be a power of two >= 2048",
                self.poly_degree
            )));
        }
        if self.moduli_bits.is_empty() || self.moduli_bits.iter().any(|b| *b == 0 || *b > 62) {
            return Err(CryptoError::InvalidParams(
                "moduli_bits must be non-empty with entries in 1..=62".into(),
            ));
        }
        if !self.noise_epsilon.is_finite() || self.noise_epsilon < 0.0 {
            return Err(CryptoError::InvalidParams(
                "noise_epsilon must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Packing capacity in values per block.
    pub fn slots(&self) -> usize {
        self.poly_degree / 2
    }

    /// Remaining multiplicative depth of a freshly encrypted block.
    pub fn initial_level(&self) -> u32 {
        self.moduli_bits.len() as u32 - 1
    }

    /// Modeled wire size of one ciphertext block in bytes.
    pub fn block_bytes(&self) -> u64 {
        let sum: u64 = self.moduli_bits.iter().map(|b| u64::from(*b)).sum();
        2 * self.poly_degree as u64 * sum / 8
    }

    /// Widest block of `rows`-row tensors this parameter set can pack.
    pub fn chunk_for(&self, rows: usize) -> Result<usize, CryptoError> {
        if rows == 0 || rows > self.slots() {
            return Err(CryptoError::Capacity {
                needed: rows,
                slots: self.slots(),
            });
        }
        Ok(self.slots() / rows)
    }

    /// Stable fingerprint used to detect mixed-parameter operands.
    pub fn id(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 + 4 * self.moduli_bits.len());
        bytes.extend_from_slice(&(self.poly_degree as u64).to_le_bytes());
        for b in &self.moduli_bits {
            bytes.extend_from_slice(&b.to_le_bytes());
        }
        fnv1a64(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HePublicKey {
    pub params: HeParams,
    token: [u8; 16],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeSecretKey {
    pub params: HeParams,
    token: [u8; 16],
}

/// One ciphertext block.
///
/// The payload is backend-defined; for [`SimulatedBackend`] it is a
/// 16-byte key token followed by the packed `rows * width` values in
/// row-major little-endian `f64`. `byte_size` is the modeled transport
/// cost, which is independent of how full the block is.
#[derive(Debug, Clone, PartialEq)]
pub struct CipherBlock {
    pub rows: usize,
    pub width: usize,
    pub level: u32,
    pub params_id: u64,
    pub byte_size: u64,
    payload: Vec<u8>,
}

impl CipherBlock {
    /// Serialized form, little-endian throughout:
    ///
    /// | offset | size | field        |
    /// |--------|------|--------------|
    /// | 0      | 4    | rows (u32)   |
    /// | 4      | 4    | width (u32)  |
    /// | 8      | 4    | level (u32)  |
    /// | 12     | 8    | params id    |
    /// | 20     | 8    | byte size    |
    /// | 28     | 8    | payload len  |
    /// | 36     | var  | payload      |
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + self.payload.len());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.level.to_le_bytes());
        out.extend_from_slice(&self.params_id.to_le_bytes());
        out.extend_from_slice(&self.byte_size.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one block and returns it with the number of bytes read.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), CryptoError> {
        if bytes.len() < 36 {
            return Err(CryptoError::Wire("truncated block header".into()));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let level = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let params_id = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let byte_size = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let payload_len = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        if bytes.len() < 36 + payload_len {
            return Err(CryptoError::Wire("truncated block payload".into()));
        }
        if payload_len != 16 + rows * width * 8 {
            return Err(CryptoError::Wire(format!(
                "payload length {payload_len} does not match {rows}x{width} block"
            )));
        }
        let payload = bytes[36..36 + payload_len].to_vec();
        Ok((
            CipherBlock {
                rows,
                width,
                level,
                params_id,
                byte_size,
                payload,
            },
            36 + payload_len,
        ))
    }

    fn token(&self) -> [u8; 16] {
        self.payload[0..16].try_into().unwrap()
    }

    fn values(&self) -> Vec<f64> {
        self.payload[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }

    fn plaintext(&self) -> Matrix {
        Matrix::new(self.rows, self.width, self.values())
            .expect("simulated payload always holds a valid matrix")
    }

    fn with_plaintext(&self, m: &Matrix, level: u32) -> CipherBlock {
        CipherBlock {
            rows: m.rows(),
            width: m.cols(),
            level,
            params_id: self.params_id,
            byte_size: self.byte_size,
            payload: encode_payload(self.token(), m),
        }
    }
}

fn encode_payload(token: [u8; 16], m: &Matrix) -> Vec<u8> {
    let mut payload = Vec::with_capacity(16 + m.data().len() * 8);
    payload.extend_from_slice(&token);
    for v in m.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    payload
}

/// The backend seam. A real lattice implementation would slot in here;
/// the simulator is the one required implementation and is exact.
pub trait HeBackend {
    fn keygen(&self, params: &HeParams, seed: u64)
        -> Result<(HePublicKey, HeSecretKey), CryptoError>;
    fn encrypt(&self, block: &Matrix, pk: &HePublicKey) -> Result<CipherBlock, CryptoError>;
    fn add(&self, a: &CipherBlock, b: &CipherBlock) -> Result<CipherBlock, CryptoError>;
    fn mask_mul(&self, c: &CipherBlock, mask: &[f64]) -> Result<CipherBlock, CryptoError>;
    fn plain_matmul(
        &self,
        p: &Matrix,
        c: &CipherBlock,
        params: &HeParams,
    ) -> Result<CipherBlock, CryptoError>;
    fn decrypt(&self, c: &CipherBlock, sk: &HeSecretKey) -> Result<Matrix, CryptoError>;
}

/// Exact arithmetic behind an opaque token, with honest capacity,
/// size, depth, and key checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedBackend;

impl SimulatedBackend {
    fn check_depth(c: &CipherBlock) -> Result<u32, CryptoError> {
        if c.level == 0 {
            return Err(CryptoError::DepthExhausted);
        }
        Ok(c.level - 1)
    }
}

impl HeBackend for SimulatedBackend {
    fn keygen(
        &self,
        params: &HeParams,
        seed: u64,
    ) -> Result<(HePublicKey, HeSecretKey), CryptoError> {
        params.validate()?;
        let a = splitmix64(seed ^ params.id());
        let b = splitmix64(a);
        let mut token = [0u8; 16];
        token[0..8].copy_from_slice(&a.to_le_bytes());
        token[8..16].copy_from_slice(&b.to_le_bytes());
        Ok((
            HePublicKey {
                params: params.clone(),
                token,
            },
            HeSecretKey {
                params: params.clone(),
                token,
            },
        ))
    }

    fn encrypt(&self, block: &Matrix, pk: &HePublicKey) -> Result<CipherBlock, CryptoError> {
        let needed = block.rows() * block.cols();
        if needed > pk.params.slots() {
            return Err(CryptoError::Capacity {
                needed,
                slots: pk.params.slots(),
            });
        }
        Ok(CipherBlock {
            rows: block.rows(),
            width: block.cols(),
            level: pk.params.initial_level(),
            params_id: pk.params.id(),
            byte_size: pk.params.block_bytes(),
            payload: encode_payload(pk.token, block),
        })
    }

    fn add(&self, a: &CipherBlock, b: &CipherBlock) -> Result<CipherBlock, CryptoError> {
        if a.rows != b.rows || a.width != b.width {
            return Err(CryptoError::Incompatible(format!(
                "shape {}x{} vs {}x{}",
                a.rows, a.width, b.rows, b.width
            )));
        }
        if a.params_id != b.params_id {
            return Err(CryptoError::Incompatible("mixed parameter sets".into()));
        }
        if a.level != b.level {
            return Err(CryptoError::Incompatible(format!(
                "level {} vs {}",
                a.level, b.level
            )));
        }
        if a.token() != b.token() {
            return Err(CryptoError::Incompatible("mixed keys".into()));
        }
        let sum = a
            .plaintext()
            .add(&b.plaintext())
            .map_err(|_| CryptoError::NonFinite)?;
        Ok(a.with_plaintext(&sum, a.level))
    }

    fn mask_mul(&self, c: &CipherBlock, mask: &[f64]) -> Result<CipherBlock, CryptoError> {
        if mask.len() != c.width {
            return Err(CryptoError::Incompatible(format!(
                "mask length {} vs width {}",
                mask.len(),
                c.width
            )));
        }
        if mask.iter().any(|m| !m.is_finite()) {
            return Err(CryptoError::NonFinite);
        }
        let level = Self::check_depth(c)?;
        let plain = c.plaintext();
        let mut out = Matrix::zeros(c.rows, c.width);
        for i in 0..c.rows {
            for (j, m) in mask.iter().enumerate() {
                out.set(i, j, plain.get(i, j) * m);
            }
        }
        Ok(c.with_plaintext(&out, level))
    }

    fn plain_matmul(
        &self,
        p: &Matrix,
        c: &CipherBlock,
        params: &HeParams,
    ) -> Result<CipherBlock, CryptoError> {
        if params.id() != c.params_id {
            return Err(CryptoError::Incompatible(
                "ciphertext bound to different parameters".into(),
            ));
        }
        if p.cols() != c.rows {
            return Err(CryptoError::Incompatible(format!(
                "plain {}x{} against cipher {}x{}",
                p.rows(),
                p.cols(),
                c.rows,
                c.width
            )));
        }
        // The product must itself fit one block's slots.
        let needed = p.rows() * c.width;
        if needed > params.slots() {
            return Err(CryptoError::Capacity {
                needed,
                slots: params.slots(),
            });
        }
        let level = Self::check_depth(c)?;
        let product = p.matmul(&c.plaintext()).map_err(|_| CryptoError::NonFinite)?;
        Ok(c.with_plaintext(&product, level))
    }

    fn decrypt(&self, c: &CipherBlock, sk: &HeSecretKey) -> Result<Matrix, CryptoError> {
        if c.params_id != sk.params.id() {
            return Err(CryptoError::Incompatible(
                "ciphertext bound to different parameters".into(),
            ));
        }
        if c.token() != sk.token {
            return Err(CryptoError::WrongKey);
        }
        let mut plain = c.plaintext();
        if sk.params.noise_epsilon > 0.0 {
            let eps = sk.params.noise_epsilon;
            let seed = fnv1a64(&c.payload);
            for i in 0..plain.rows() {
                for j in 0..plain.cols() {
                    let idx = (i * plain.cols() + j) as u64;
                    let raw = splitmix64(seed ^ idx);
                    let unit = (raw as f64 / u64::MAX as f64) * 2.0 - 1.0;
                    let v = plain.get(i, j);
                    plain.set(i, j, v * (1.0 + eps * unit));
                }
            }
        }
        Ok(plain)
    }
}

// ── Scheme-level convenience wrappers over the simulated backend ─────

pub fn he_keygen(params: &HeParams, seed: u64) -> Result<(HePublicKey, HeSecretKey), CryptoError> {
    SimulatedBackend.keygen(params, seed)
}

pub fn encrypt_block(block: &Matrix, pk: &HePublicKey) -> Result<CipherBlock, CryptoError> {
    SimulatedBackend.encrypt(block, pk)
}

pub fn he_add(a: &CipherBlock, b: &CipherBlock) -> Result<CipherBlock, CryptoError> {
    SimulatedBackend.add(a, b)
}

pub fn he_plain_mask_mul(c: &CipherBlock, mask: &[f64]) -> Result<CipherBlock, CryptoError> {
    SimulatedBackend.mask_mul(c, mask)
}

/// Multiplies a plaintext matrix into a cipher block. The product must
/// still fit one block's slot budget.
pub fn he_plain_matmul(
    p: &Matrix,
    c: &CipherBlock,
    params: &HeParams,
) -> Result<CipherBlock, CryptoError> {
    SimulatedBackend.plain_matmul(p, c, params)
}

pub fn decrypt_block(c: &CipherBlock, sk: &HeSecretKey) -> Result<Matrix, CryptoError> {
    SimulatedBackend.decrypt(c, sk)
}

// ── Chunked column slabs ─────────────────────────────────────────────

/// An ordered run of cipher blocks covering the rightmost `covered`
/// columns of a `rows x n` matrix.
///
/// Blocks are right-anchored: counting from the right edge, window `j`
/// holds columns at offsets `j*chunk+1 ..= (j+1)*chunk`, and every
/// block has physical width `chunk` so that windows line up across
/// clients with different budgets. When `covered` is not a multiple of
/// `chunk`, the leftmost block's unused left columns are zero filler.
/// Blocks are stored left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct CipherBlockList {
    pub blocks: Vec<CipherBlock>,
    pub rows: usize,
    /// Logical number of covered columns.
    pub covered: usize,
    pub chunk: usize,
}

impl CipherBlockList {
    pub fn empty(rows: usize, chunk: usize) -> Self {
        CipherBlockList {
            blocks: Vec::new(),
            rows,
            covered: 0,
            chunk,
        }
    }

    /// Encrypts the rightmost `k` columns of `m` in `ceil(k / chunk)`
    /// blocks.
    pub fn encrypt_tail(
        m: &Matrix,
        k: usize,
        chunk: usize,
        pk: &HePublicKey,
    ) -> Result<Self, CryptoError> {
        if k > m.cols() {
            return Err(CryptoError::Incompatible(format!(
                "cannot encrypt {k} of {} columns",
                m.cols()
            )));
        }
        if chunk == 0 {
            return Err(CryptoError::InvalidParams("chunk must be positive".into()));
        }
        let n = m.cols() as i64;
        let n_blocks = k.div_ceil(chunk);
        let mut blocks = Vec::with_capacity(n_blocks);
        for j in (0..n_blocks).rev() {
            let mut data = Vec::with_capacity(m.rows() * chunk);
            for i in 0..m.rows() {
                for t in 0..chunk {
                    let col = n - ((j + 1) * chunk) as i64 + t as i64;
                    if col < n - k as i64 {
                        data.push(0.0);
                    } else {
                        data.push(m.get(i, col as usize));
                    }
                }
            }
            let block = Matrix::new(m.rows(), chunk, data).map_err(|_| CryptoError::NonFinite)?;
            blocks.push(encrypt_block(&block, pk)?);
        }
        Ok(CipherBlockList {
            blocks,
            rows: m.rows(),
            covered: k,
            chunk,
        })
    }

    /// Decrypts and reassembles the covered columns as a
    /// `rows x covered` matrix.
    pub fn decrypt_tail(&self, sk: &HeSecretKey) -> Result<Matrix, CryptoError> {
        let mut slab = Matrix::zeros(self.rows, 0);
        for block in &self.blocks {
            let plain = decrypt_block(block, sk)?;
            slab = slab
                .hstack(&plain)
                .map_err(|e| CryptoError::Incompatible(e.to_string()))?;
        }
        let total = slab.cols();
        slab.col_range(total - self.covered, total)
            .map_err(|e| CryptoError::Incompatible(e.to_string()))
    }

    /// Modeled transport cost of the whole list.
    pub fn total_byte_size(&self) -> u64 {
        self.blocks.iter().map(|b| b.byte_size).sum()
    }

    /// Serialized form: `rows`, `covered`, `chunk`, block count (all
    /// u32 little-endian), then the blocks in list order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.covered as u32).to_le_bytes());
        out.extend_from_slice(&(self.chunk as u32).to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&b.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), CryptoError> {
        if bytes.len() < 16 {
            return Err(CryptoError::Wire("truncated block list header".into()));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let covered = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let chunk = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut offset = 16;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let (block, used) = CipherBlock::from_bytes(&bytes[offset..])?;
            offset += used;
            blocks.push(block);
        }
        Ok((
            CipherBlockList {
                blocks,
                rows,
                covered,
                chunk,
            },
            offset,
        ))
    }
}
