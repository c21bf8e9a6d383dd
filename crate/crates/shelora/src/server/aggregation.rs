//! Column-aware aggregation of the plaintext and ciphertext halves of
//! client updates, plus the downlink preparation steps: one shared SVD
//! sliced per client rank, and budget-sized truncation of the
//! aggregated ciphertext.
//!
//! Conventions. Plaintext slabs are left-aligned: column `j` of every
//! client lines up, and clients whose slab is narrower simply stop
//! contributing. Ciphertext slabs are right-aligned: the rightmost
//! columns of every client line up, which is what makes blocks of
//! clients with different budgets addable window by window. Averages
//! are realized as a sum followed by multiplication with reciprocal
//! counts so the plaintext and ciphertext paths produce bit-identical
//! numbers under the simulated backend.

use crate::crypto::{
    he_add, he_plain_mask_mul, he_plain_matmul, CipherBlockList, HeParams,
};
use crate::linalg::Matrix;

use super::ServerError;

/// Mean of the left-aligned plaintext slabs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPlain {
    /// `m x K` with `K` the widest input.
    pub matrix: Matrix,
    /// Contributor count per column, length `K`.
    pub counts: Vec<usize>,
}

/// Homomorphic mean of the right-aligned ciphertext slabs.
#[derive(Debug, Clone)]
pub struct AggregatedCipher {
    /// Blocks covering `m x K*` with `K*` the largest budget.
    pub blocks: CipherBlockList,
    /// Contributor count per covered column, left to right, length `K*`.
    pub counts: Vec<usize>,
}

/// One client's slice of the shared aggregate decomposition.
#[derive(Debug, Clone)]
pub struct PlainFactors {
    /// `m x r` left factor slice.
    pub u: Matrix,
    /// Leading `r` singular values.
    pub sigma: Vec<f64>,
    /// `r x K` right factor slice.
    pub vt: Matrix,
    /// True when the requested rank exceeded `min(m, K)`.
    pub clamped: bool,
}

impl PlainFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `u * diag(sigma) * vt`.
    pub fn reconstruct(&self) -> Matrix {
        crate::linalg::SvdResult {
            u: self.u.clone(),
            sigma: self.sigma.clone(),
            vt: self.vt.clone(),
        }
        .reconstruct()
    }
}

/// Applies a client's left factor to both halves of its update, so the
/// aggregation below sees `m`-row slabs on each side.
pub fn materialize_update(
    b: &Matrix,
    a_plain: &Matrix,
    blocks: &CipherBlockList,
    params: &HeParams,
) -> Result<(Matrix, CipherBlockList), ServerError> {
    if !blocks.blocks.is_empty() && blocks.rows != b.cols() {
        return Err(ServerError::Validation(format!(
            "left factor has {} columns but cipher rows are {}",
            b.cols(),
            blocks.rows
        )));
    }
    let plain = b.matmul(a_plain)?;
    let mut out = Vec::with_capacity(blocks.blocks.len());
    for block in &blocks.blocks {
        out.push(he_plain_matmul(b, block, params)?);
    }
    Ok((
        plain,
        CipherBlockList {
            blocks: out,
            rows: b.rows(),
            covered: blocks.covered,
            chunk: blocks.chunk,
        },
    ))
}

/// Column-wise mean of left-aligned slabs.
///
/// Output column `j` averages the clients whose slab is wider than `j`,
/// so the result is as wide as the widest input and every retained
/// column has at least one contributor.
pub fn aggregate_plain(updates: &[Matrix]) -> Result<AggregatedPlain, ServerError> {
    if updates.is_empty() {
        return Err(ServerError::Validation("no plaintext updates".into()));
    }
    let m = updates[0].rows();
    for (i, u) in updates.iter().enumerate() {
        if u.rows() != m {
            return Err(ServerError::Validation(format!(
                "update {i} has {} rows, expected {m}",
                u.rows()
            )));
        }
    }
    let width = updates.iter().map(Matrix::cols).max().unwrap_or(0);
    let mut matrix = Matrix::zeros(m, width);
    let mut counts = vec![0usize; width];
    for u in updates {
        for j in 0..u.cols() {
            counts[j] += 1;
            for i in 0..m {
                matrix.set(i, j, matrix.get(i, j) + u.get(i, j));
            }
        }
    }
    for (j, &count) in counts.iter().enumerate() {
        let inv = 1.0 / count as f64;
        for i in 0..m {
            matrix.set(i, j, matrix.get(i, j) * inv);
        }
    }
    Ok(AggregatedPlain { matrix, counts })
}

/// Homomorphic column-wise mean of right-aligned block lists.
///
/// Lists must share the chunk width and row count; clients with an
/// empty list contribute nothing. Window `w` (counting from the right
/// edge) sums the `w`-th-from-last block of every client that has one,
/// then a reciprocal-count mask realizes the division. Columns no
/// client covers (the zero filler left of the largest budget) are
/// masked to exact zero.
pub fn aggregate_cipher(updates: &[CipherBlockList]) -> Result<AggregatedCipher, ServerError> {
    if updates.is_empty() {
        return Err(ServerError::Validation("no ciphertext updates".into()));
    }
    let chunk = updates[0].chunk;
    let rows = updates[0].rows;
    for (i, u) in updates.iter().enumerate() {
        if u.chunk != chunk {
            return Err(ServerError::Validation(format!(
                "update {i} has chunk {}, expected {chunk}",
                u.chunk
            )));
        }
        if !u.blocks.is_empty() && u.rows != rows {
            return Err(ServerError::Validation(format!(
                "update {i} has {} rows, expected {rows}",
                u.rows
            )));
        }
        if u.blocks.len() != u.covered.div_ceil(chunk) {
            return Err(ServerError::Validation(format!(
                "update {i} covers {} columns in {} blocks of chunk {chunk}",
                u.covered,
                u.blocks.len()
            )));
        }
    }

    let k_star = updates.iter().map(|u| u.covered).max().unwrap_or(0);
    let count_at = |offset: usize| updates.iter().filter(|u| u.covered >= offset).count();
    let counts: Vec<usize> = (0..k_star).map(|j| count_at(k_star - j)).collect();

    if k_star == 0 {
        return Ok(AggregatedCipher {
            blocks: CipherBlockList::empty(rows, chunk),
            counts,
        });
    }

    let n_windows = k_star.div_ceil(chunk);
    let mut blocks = Vec::with_capacity(n_windows);
    for w in (0..n_windows).rev() {
        let mut acc = None;
        for u in updates {
            if u.blocks.len() > w {
                let block = &u.blocks[u.blocks.len() - 1 - w];
                acc = Some(match acc {
                    None => block.clone(),
                    Some(sum) => he_add(&sum, block)?,
                });
            }
        }
        let sum = acc.expect("every window up to the widest list has a contributor");
        let mask: Vec<f64> = (0..chunk)
            .map(|c| {
                let offset = (w + 1) * chunk - c;
                match count_at(offset) {
                    0 => 0.0,
                    n => 1.0 / n as f64,
                }
            })
            .collect();
        blocks.push(he_plain_mask_mul(&sum, &mask)?);
    }

    Ok(AggregatedCipher {
        blocks: CipherBlockList {
            blocks,
            rows,
            covered: k_star,
            chunk,
        },
        counts,
    })
}

/// One SVD of the aggregate, sliced to each requested rank.
///
/// Ranks beyond `min(m, K)` are clamped and flagged; the slices of a
/// zero-width aggregate are empty.
pub fn svd_and_slice(
    agg: &AggregatedPlain,
    ranks: &[usize],
) -> Result<Vec<PlainFactors>, ServerError> {
    let m = agg.matrix.rows();
    let width = agg.matrix.cols();
    for &r in ranks {
        if r == 0 {
            return Err(ServerError::Validation("rank must be at least 1".into()));
        }
    }
    if m == 0 || width == 0 {
        return Ok(ranks
            .iter()
            .map(|_| PlainFactors {
                u: Matrix::zeros(m, 0),
                sigma: Vec::new(),
                vt: Matrix::zeros(0, width),
                clamped: true,
            })
            .collect());
    }
    let svd = agg.matrix.svd()?;
    let p = svd.sigma.len();
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let eff = r.min(p);
        if eff < r {
            log::warn!("rank {r} clamped to {eff} for a {m}x{width} aggregate");
        }
        let mut vt_rows = Vec::with_capacity(eff);
        for t in 0..eff {
            vt_rows.push(svd.vt.row(t).to_vec());
        }
        out.push(PlainFactors {
            u: svd.u.col_range(0, eff)?,
            sigma: svd.sigma[..eff].to_vec(),
            vt: if eff == 0 {
                Matrix::zeros(0, width)
            } else {
                Matrix::from_rows(&vt_rows)?
            },
            clamped: eff < r,
        });
    }
    Ok(out)
}

/// Restricts the aggregate ciphertext to the rightmost `k` columns.
///
/// Whole blocks are reused as-is; when the cut lands inside a block,
/// that block's excess left columns are zero-masked so the client
/// decrypts exactly its budget, never other clients' residue.
pub fn truncate_cipher(agg: &AggregatedCipher, k: usize) -> Result<CipherBlockList, ServerError> {
    let list = &agg.blocks;
    if k > list.covered {
        return Err(ServerError::Validation(format!(
            "budget {k} exceeds the {} aggregated columns",
            list.covered
        )));
    }
    if k == 0 {
        return Ok(CipherBlockList::empty(list.rows, list.chunk));
    }
    let chunk = list.chunk;
    let keep = k.div_ceil(chunk);
    let mut blocks = list.blocks[list.blocks.len() - keep..].to_vec();
    if k < list.covered && keep * chunk > k {
        // Zero out columns beyond the budget in the boundary block.
        let cut = keep * chunk - k;
        let mask: Vec<f64> = (0..chunk).map(|c| if c < cut { 0.0 } else { 1.0 }).collect();
        blocks[0] = he_plain_mask_mul(&blocks[0], &mask)?;
    }
    Ok(CipherBlockList {
        blocks,
        rows: list.rows,
        covered: k,
        chunk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{he_keygen, CipherBlock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> HeParams {
        HeParams::new(2048, vec![60, 40, 40, 60]).unwrap()
    }

    fn assert_matrix_eq(got: &Matrix, want: &Matrix) {
        assert_eq!(got.rows(), want.rows());
        assert_eq!(got.cols(), want.cols());
        for i in 0..got.rows() {
            for j in 0..got.cols() {
                assert_eq!(got.get(i, j), want.get(i, j), "entry ({i}, {j})");
            }
        }
    }

    // ── Plaintext aggregation ────────────────────────────────────────

    #[test]
    fn plain_aggregation_hand_example() {
        let w1 = Matrix::from_rows(&[vec![2.0, 4.0, 6.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let agg = aggregate_plain(&[w1, w2]).unwrap();
        let want = Matrix::from_rows(&[vec![1.0, 2.0, 6.0], vec![1.0, 1.0, 0.0]]).unwrap();
        assert_matrix_eq(&agg.matrix, &want);
        assert_eq!(agg.counts, vec![2, 2, 1]);
    }

    #[test]
    fn plain_aggregation_single_client_is_identity() {
        let w = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]).unwrap();
        let agg = aggregate_plain(std::slice::from_ref(&w)).unwrap();
        assert_matrix_eq(&agg.matrix, &w);
        assert_eq!(agg.counts, vec![1, 1]);
    }

    #[test]
    fn plain_aggregation_of_equal_inputs_is_that_input() {
        let w = Matrix::from_rows(&[vec![0.5, 1.5, 2.5]]).unwrap();
        let agg = aggregate_plain(&[w.clone(), w.clone(), w.clone()]).unwrap();
        assert_matrix_eq(&agg.matrix, &w);
    }

    #[test]
    fn plain_aggregation_rejects_row_mismatch() {
        let w1 = Matrix::zeros(2, 3);
        let w2 = Matrix::zeros(3, 3);
        assert!(aggregate_plain(&[w1, w2]).is_err());
    }

    #[test]
    fn plain_aggregation_handles_zero_width_clients() {
        let w1 = Matrix::from_rows(&[vec![4.0], vec![8.0]]).unwrap();
        let w2 = Matrix::zeros(2, 0);
        let agg = aggregate_plain(&[w1.clone(), w2]).unwrap();
        assert_matrix_eq(&agg.matrix, &w1);
        assert_eq!(agg.counts, vec![1]);
    }

    // ── Ciphertext aggregation ───────────────────────────────────────

    #[test]
    fn cipher_aggregation_mirrors_plain_on_hand_example() {
        // Budgets 1 and 2 over a 4-column adapter row: the rightmost
        // column averages both clients, the next is client 2 alone.
        let p = params();
        let (pk, sk) = he_keygen(&p, 9).unwrap();
        let a1 = Matrix::from_rows(&[vec![2.0, 4.0, 6.0, 8.0]]).unwrap();
        let a2 = Matrix::from_rows(&[vec![1.0, 3.0, 5.0, 7.0]]).unwrap();
        let c1 = CipherBlockList::encrypt_tail(&a1, 1, 2, &pk).unwrap();
        let c2 = CipherBlockList::encrypt_tail(&a2, 2, 2, &pk).unwrap();

        let agg = aggregate_cipher(&[c1, c2]).unwrap();
        assert_eq!(agg.counts, vec![1, 2]);
        assert_eq!(agg.blocks.covered, 2);

        let got = agg.blocks.decrypt_tail(&sk).unwrap();
        let want = Matrix::from_rows(&[vec![5.0, 7.5]]).unwrap();
        assert_matrix_eq(&got, &want);
    }

    #[test]
    fn cipher_aggregation_single_client_is_identity() {
        let p = params();
        let (pk, sk) = he_keygen(&p, 9).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let c = CipherBlockList::encrypt_tail(&a, 3, 2, &pk).unwrap();
        let agg = aggregate_cipher(std::slice::from_ref(&c)).unwrap();
        let got = agg.blocks.decrypt_tail(&sk).unwrap();
        assert_matrix_eq(&got, &a);
        assert_eq!(agg.counts, vec![1, 1, 1]);
    }

    #[test]
    fn cipher_aggregation_of_zeros_decrypts_to_zeros() {
        let p = params();
        let (pk, sk) = he_keygen(&p, 9).unwrap();
        let z = Matrix::zeros(2, 4);
        let c1 = CipherBlockList::encrypt_tail(&z, 3, 2, &pk).unwrap();
        let c2 = CipherBlockList::encrypt_tail(&z, 2, 2, &pk).unwrap();
        let agg = aggregate_cipher(&[c1, c2]).unwrap();
        let got = agg.blocks.decrypt_tail(&sk).unwrap();
        assert_matrix_eq(&got, &Matrix::zeros(2, 3));
    }

    #[test]
    fn cipher_aggregation_skips_empty_lists() {
        let p = params();
        let (pk, sk) = he_keygen(&p, 9).unwrap();
        let a = Matrix::from_rows(&[vec![3.0, 9.0]]).unwrap();
        let c = CipherBlockList::encrypt_tail(&a, 2, 2, &pk).unwrap();
        let none = CipherBlockList::empty(1, 2);
        let agg = aggregate_cipher(&[none, c]).unwrap();
        let got = agg.blocks.decrypt_tail(&sk).unwrap();
        assert_matrix_eq(&got, &a);
    }

    #[test]
    fn cipher_aggregation_rejects_mixed_chunks() {
        let p = params();
        let (pk, _) = he_keygen(&p, 9).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let c1 = CipherBlockList::encrypt_tail(&a, 2, 2, &pk).unwrap();
        let c2 = CipherBlockList::encrypt_tail(&a, 2, 3, &pk).unwrap();
        assert!(aggregate_cipher(&[c1, c2]).is_err());
    }

    #[test]
    fn cipher_aggregation_consumes_one_level() {
        let p = params();
        let (pk, _) = he_keygen(&p, 9).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let c = CipherBlockList::encrypt_tail(&a, 3, 2, &pk).unwrap();
        let before = c.blocks[0].level;
        let agg = aggregate_cipher(&[c]).unwrap();
        for b in &agg.blocks.blocks {
            assert_eq!(b.level, before - 1);
        }
    }

    #[test]
    fn cipher_path_equals_plain_path_on_random_instances() {
        let p = params();
        let (pk, sk) = he_keygen(&p, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let m = rng.gen_range(1..4usize);
            let n = rng.gen_range(2..7usize);
            let n_clients = rng.gen_range(1..5usize);
            let chunk = rng.gen_range(1..4usize);
            let mut lists = Vec::new();
            let mut plains = Vec::new();
            for _ in 0..n_clients {
                let k = rng.gen_range(0..=n);
                let mut data = Vec::with_capacity(m * n);
                for _ in 0..m * n {
                    data.push(rng.gen_range(-2.0..2.0));
                }
                let w = Matrix::new(m, n, data).unwrap();
                lists.push(CipherBlockList::encrypt_tail(&w, k, chunk, &pk).unwrap());
                plains.push((w, k));
            }
            let agg = aggregate_cipher(&lists).unwrap();
            let k_star = plains.iter().map(|(_, k)| *k).max().unwrap();
            if k_star == 0 {
                assert!(agg.blocks.blocks.is_empty());
                continue;
            }
            let got = agg.blocks.decrypt_tail(&sk).unwrap();

            // Brute-force oracle: right-aligned sum times reciprocal count.
            let mut want = Matrix::zeros(m, k_star);
            for j in 0..k_star {
                let offset = k_star - j;
                let count = plains.iter().filter(|(_, k)| *k >= offset).count();
                for i in 0..m {
                    let mut sum = 0.0;
                    for (w, k) in &plains {
                        if *k >= offset {
                            sum += w.get(i, n - offset);
                        }
                    }
                    want.set(i, j, sum * (1.0 / count as f64));
                }
            }
            assert_matrix_eq(&got, &want);
        }
    }

    // ── Materialization ──────────────────────────────────────────────

    #[test]
    fn materialize_applies_left_factor_to_both_halves() {
        let p = params();
        let (pk, sk) = he_keygen(&p, 5).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]).unwrap();
        let k = 2;
        let a_plain = a.col_range(0, 2).unwrap();
        let blocks = CipherBlockList::encrypt_tail(&a, k, 2, &pk).unwrap();

        let (plain, cipher) = materialize_update(&b, &a_plain, &blocks, &p).unwrap();
        assert_eq!(plain.rows(), 3);
        assert_eq!(cipher.rows, 3);

        let full = b.matmul(&a).unwrap();
        assert_matrix_eq(&plain, &full.col_range(0, 2).unwrap());
        let tail = cipher.decrypt_tail(&sk).unwrap();
        assert_matrix_eq(&tail, &full.col_range(2, 4).unwrap());
    }

    #[test]
    fn materialize_rejects_row_mismatch() {
        let p = params();
        let (pk, _) = he_keygen(&p, 5).unwrap();
        let b = Matrix::zeros(3, 2);
        let a = Matrix::zeros(3, 4);
        let blocks = CipherBlockList::encrypt_tail(&a, 2, 2, &pk).unwrap();
        assert!(materialize_update(&b, &Matrix::zeros(2, 2), &blocks, &p).is_err());
    }

    // ── SVD slicing ──────────────────────────────────────────────────

    #[test]
    fn svd_slice_of_rank_one_aggregate_reconstructs() {
        let u = [1.0, 2.0, 3.0];
        let v = [4.0, 5.0];
        let mut m = Matrix::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                m.set(i, j, u[i] * v[j]);
            }
        }
        let agg = AggregatedPlain {
            matrix: m.clone(),
            counts: vec![1, 1],
        };
        let slices = svd_and_slice(&agg, &[1, 2]).unwrap();
        for s in &slices {
            let diff = s.reconstruct().sub(&m).unwrap().frobenius_norm();
            assert!(diff < 1e-8, "residual {diff}");
        }
        assert_eq!(slices[0].rank(), 1);
    }

    #[test]
    fn svd_slice_full_rank_reconstructs() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 0.5], vec![-1.0, 0.5, 2.0]]).unwrap();
        let agg = AggregatedPlain {
            matrix: m.clone(),
            counts: vec![2, 2, 2],
        };
        let slices = svd_and_slice(&agg, &[2]).unwrap();
        let diff = slices[0].reconstruct().sub(&m).unwrap().frobenius_norm();
        assert!(diff < 1e-8, "residual {diff}");
        assert!(!slices[0].clamped);
    }

    #[test]
    fn svd_slice_clamps_oversized_ranks() {
        let agg = AggregatedPlain {
            matrix: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            counts: vec![1, 1],
        };
        let slices = svd_and_slice(&agg, &[5]).unwrap();
        assert_eq!(slices[0].rank(), 2);
        assert!(slices[0].clamped);
    }

    #[test]
    fn svd_slice_of_zeros_is_zero() {
        let agg = AggregatedPlain {
            matrix: Matrix::zeros(3, 3),
            counts: vec![1, 1, 1],
        };
        let slices = svd_and_slice(&agg, &[2]).unwrap();
        assert_eq!(slices[0].reconstruct(), Matrix::zeros(3, 3));
    }

    #[test]
    fn svd_slice_rejects_zero_rank() {
        let agg = AggregatedPlain {
            matrix: Matrix::zeros(2, 2),
            counts: vec![1, 1],
        };
        assert!(svd_and_slice(&agg, &[0]).is_err());
    }

    // ── Truncation ───────────────────────────────────────────────────

    fn cipher_of(m: &Matrix, k: usize, chunk: usize, seed: u64) -> (AggregatedCipher, crate::crypto::HeSecretKey) {
        let p = params();
        let (pk, sk) = he_keygen(&p, seed).unwrap();
        let list = CipherBlockList::encrypt_tail(m, k, chunk, &pk).unwrap();
        (aggregate_cipher(&[list]).unwrap(), sk)
    }

    #[test]
    fn truncate_keeps_everything_at_full_budget() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (agg, sk) = cipher_of(&m, 3, 2, 17);
        let before: Vec<u32> = agg.blocks.blocks.iter().map(|b| b.level).collect();
        let out = truncate_cipher(&agg, 3).unwrap();
        let after: Vec<u32> = out.blocks.iter().map(|b| b.level).collect();
        assert_eq!(before, after, "full-budget truncation must not spend depth");
        let got = out.decrypt_tail(&sk).unwrap();
        assert_matrix_eq(&got, &m.col_range(1, 4).unwrap());
    }

    #[test]
    fn truncate_to_zero_is_empty() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (agg, _) = cipher_of(&m, 2, 2, 17);
        let out = truncate_cipher(&agg, 0).unwrap();
        assert!(out.blocks.is_empty());
        assert_eq!(out.covered, 0);
    }

    #[test]
    fn truncate_masks_partial_block() {
        // Three covered columns in chunk-2 blocks, budget 1: only the
        // final column may survive.
        let m = Matrix::from_rows(&[vec![9.0, 1.0, 2.0, 3.0]]).unwrap();
        let (agg, sk) = cipher_of(&m, 3, 2, 17);
        let out = truncate_cipher(&agg, 1).unwrap();
        assert_eq!(out.blocks.len(), 1);
        let got = out.decrypt_tail(&sk).unwrap();
        let want = Matrix::from_rows(&[vec![3.0]]).unwrap();
        assert_matrix_eq(&got, &want);

        // The masked block's hidden left column must be exactly zero.
        let raw: &CipherBlock = &out.blocks[0];
        let plain = crate::crypto::decrypt_block(raw, &sk).unwrap();
        assert_eq!(plain.get(0, 0), 0.0);
    }

    #[test]
    fn truncate_rejects_budget_beyond_coverage() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (agg, _) = cipher_of(&m, 2, 2, 17);
        assert!(truncate_cipher(&agg, 3).is_err());
    }
}
