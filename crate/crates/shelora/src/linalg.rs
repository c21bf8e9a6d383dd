//! Dense row-major matrices and the deterministic numerics the
//! aggregation protocol is built on: products, column permutation,
//! zero padding, a one-sided Jacobi SVD, and low-rank factoring.
//!
//! Everything here is sized for desk-scale experiments (a few hundred
//! rows/columns at most), so the implementations favor fixed iteration
//! order and bit-reproducibility over throughput.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Relative threshold below which off-diagonal mass counts as converged
/// and small singular values are flushed to exact zero.
const SVD_TOL: f64 = 1e-12;

/// Hard cap on Jacobi sweeps; reached only for pathological inputs.
const MAX_SWEEPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("invalid permutation: {0}")]
    Permutation(String),
    #[error("svd did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("matrix csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for LinalgError {
    fn from(e: std::io::Error) -> Self {
        LinalgError::Io(e.to_string())
    }
}

/// Where the original block sits inside a zero-padded target.
///
/// `Left`/`Right` anchor the block horizontally (rows anchored at the
/// top); `Top`/`Bottom` anchor vertically (columns anchored at the
/// left).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Left,
    Right,
    Top,
    Bottom,
}

/// Dense row-major matrix of `f64` values.
///
/// Zero-sized shapes (`rows == 0` or `cols == 0`) are legal and show up
/// naturally when a client encrypts everything or nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting shape/data length
    /// disagreements and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Shape(format!(
                "{rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        for (idx, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(LinalgError::NonFinite {
                    row: if cols == 0 { 0 } else { idx / cols },
                    col: if cols == 0 { 0 } else { idx % cols },
                });
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Convenience constructor from nested rows; every row must have
    /// the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Matrix::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn col(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self * other` with a fixed inner summation order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(lhs) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// Copy of columns `start..end`.
    pub fn col_range(&self, start: usize, end: usize) -> Result<Matrix, LinalgError> {
        if start > end || end > self.cols {
            return Err(LinalgError::Shape(format!(
                "column range {start}..{end} out of 0..{}",
                self.cols
            )));
        }
        let width = end - start;
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            for (jo, j) in (start..end).enumerate() {
                out.data[i * width + jo] = self.get(i, j);
            }
        }
        Ok(out)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::Shape(format!(
                "hstack rows {} vs {}",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for i in 0..self.rows {
            out.data[i * cols..i * cols + self.cols].copy_from_slice(self.row(i));
            out.data[i * cols + self.cols..(i + 1) * cols].copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.cols {
            return Err(LinalgError::Shape(format!(
                "vstack cols {} vs {}",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Reorders columns so that output column `j` is input column
    /// `perm[j]`. `perm` must be a bijection on `0..cols`.
    pub fn permute_cols(&self, perm: &[usize]) -> Result<Matrix, LinalgError> {
        if perm.len() != self.cols {
            return Err(LinalgError::Permutation(format!(
                "length {} does not match {} columns",
                perm.len(),
                self.cols
            )));
        }
        let mut seen = vec![false; self.cols];
        for &p in perm {
            if p >= self.cols || seen[p] {
                return Err(LinalgError::Permutation(format!(
                    "not a bijection on 0..{}",
                    self.cols
                )));
            }
            seen[p] = true;
        }
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, &p) in perm.iter().enumerate() {
                out.data[i * self.cols + j] = self.get(i, p);
            }
        }
        Ok(out)
    }

    /// Embeds the matrix in a `target_rows x target_cols` zero matrix
    /// with the original block at `placement`.
    pub fn zero_pad(
        &self,
        target_rows: usize,
        target_cols: usize,
        placement: Placement,
    ) -> Result<Matrix, LinalgError> {
        if target_rows < self.rows || target_cols < self.cols {
            return Err(LinalgError::Shape(format!(
                "cannot pad {}x{} into {}x{}",
                self.rows, self.cols, target_rows, target_cols
            )));
        }
        let (row_off, col_off) = match placement {
            Placement::Left | Placement::Top => (0, 0),
            Placement::Right => (0, target_cols - self.cols),
            Placement::Bottom => (target_rows - self.rows, 0),
        };
        let mut out = Matrix::zeros(target_rows, target_cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[(i + row_off) * target_cols + (j + col_off)] = self.get(i, j);
            }
        }
        Ok(out)
    }

    // ── CSV persistence ──────────────────────────────────────────────

    /// Renders the matrix as CSV: a `rows,cols` header line, then one
    /// line per row with values at 17 significant digits (enough to
    /// round-trip any finite `f64` exactly).
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("{},{}\n", self.rows, self.cols);
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Matrix, LinalgError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| LinalgError::Csv("empty input".into()))?;
        let mut dims = header.split(',');
        let rows: usize = dims
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| LinalgError::Csv(format!("bad header {header:?}")))?;
        let cols: usize = dims
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| LinalgError::Csv(format!("bad header {header:?}")))?;
        if dims.next().is_some() {
            return Err(LinalgError::Csv(format!("bad header {header:?}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| LinalgError::Csv(format!("bad value {field:?}")))?;
                data.push(v);
            }
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Csv(format!(
                "expected {} values for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        Matrix::new(rows, cols, data)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LinalgError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Matrix, LinalgError> {
        let text = std::fs::read_to_string(path)?;
        Matrix::from_csv_str(&text)
    }

    // ── Decompositions ───────────────────────────────────────────────

    /// Thin SVD via one-sided Jacobi rotations.
    ///
    /// Returns `u` (`m x p`), `sigma` (`p`, descending, non-negative)
    /// and `vt` (`p x n`) with `p = min(m, n)`. The iteration order is
    /// fixed and no randomness is involved, so equal inputs produce
    /// bit-identical results. Two conventions keep the output unique:
    /// the entry of largest magnitude in each left singular vector is
    /// made non-negative, and singular values below `1e-12` times the
    /// largest are flushed to exact zero.
    pub fn svd(&self) -> Result<SvdResult, LinalgError> {
        for (idx, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(LinalgError::NonFinite {
                    row: idx / self.cols.max(1),
                    col: idx % self.cols.max(1),
                });
            }
        }
        if self.rows >= self.cols {
            jacobi_svd_tall(self)
        } else {
            // Wide input: decompose the transpose and swap the roles of
            // the singular vector factors.
            let t = jacobi_svd_tall(&self.transpose())?;
            let u = t.vt.transpose();
            let vt = t.u.transpose();
            let mut out = SvdResult {
                u,
                sigma: t.sigma,
                vt,
            };
            apply_sign_convention(&mut out);
            Ok(out)
        }
    }

    /// Best rank-`r` factoring `self ~ b * a` with `b = u sqrt(S)` and
    /// `a = sqrt(S) vt`. `r` is clamped to `min(rows, cols)` when it
    /// exceeds the shape; the clamp is visible in the returned `rank`
    /// and `clamped` fields.
    pub fn low_rank_factor(&self, r: usize) -> Result<LowRankFactors, LinalgError> {
        if r == 0 {
            return Err(LinalgError::ZeroRank);
        }
        let p = self.rows.min(self.cols);
        let eff = r.min(p);
        let svd = self.svd()?;
        let mut b = Matrix::zeros(self.rows, eff);
        let mut a = Matrix::zeros(eff, self.cols);
        for t in 0..eff {
            let s = svd.sigma[t].sqrt();
            for i in 0..self.rows {
                b.set(i, t, svd.u.get(i, t) * s);
            }
            for j in 0..self.cols {
                a.set(t, j, svd.vt.get(t, j) * s);
            }
        }
        Ok(LowRankFactors {
            b,
            a,
            rank: eff,
            clamped: eff < r,
        })
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format!("{v:.4}")).collect();
            writeln!(f, "[{}]", line.join(", "))?;
        }
        Ok(())
    }
}

/// Thin SVD output; see [`Matrix::svd`] for the conventions.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// `u * diag(sigma) * vt`, mostly useful in tests.
    pub fn reconstruct(&self) -> Matrix {
        let m = self.u.rows();
        let n = self.vt.cols();
        let p = self.sigma.len();
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            for t in 0..p {
                let us = self.u.get(i, t) * self.sigma[t];
                if us == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += us * self.vt.get(t, j);
                }
            }
        }
        out
    }
}

/// Output of [`Matrix::low_rank_factor`].
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    pub b: Matrix,
    pub a: Matrix,
    /// Effective rank of the factors (requested rank, possibly clamped).
    pub rank: usize,
    /// True when the requested rank exceeded `min(rows, cols)`.
    pub clamped: bool,
}

// ── One-sided Jacobi internals ───────────────────────────────────────

/// One-sided Jacobi on a matrix with `rows >= cols`: rotates column
/// pairs of a working copy until all Gram cross terms are negligible,
/// accumulating the rotations into `v`.
fn jacobi_svd_tall(m: &Matrix) -> Result<SvdResult, LinalgError> {
    let rows = m.rows();
    let cols = m.cols();
    debug_assert!(rows >= cols);

    let mut b = m.clone();
    let mut v = Matrix::identity(cols);

    if cols > 1 {
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut max_off = 0.0f64;
            for p in 0..cols - 1 {
                for q in p + 1..cols {
                    let (app, aqq, apq) = gram_entries(&b, p, q);
                    let denom = (app * aqq).sqrt();
                    if denom == 0.0 {
                        continue;
                    }
                    let rel = apq.abs() / denom;
                    if rel > max_off {
                        max_off = rel;
                    }
                    if rel <= SVD_TOL {
                        continue;
                    }
                    let zeta = (aqq - app) / (2.0 * apq);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    rotate_cols(&mut b, p, q, c, s);
                    rotate_cols(&mut v, p, q, c, s);
                }
            }
            if max_off <= SVD_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(LinalgError::NoConvergence(MAX_SWEEPS));
        }
    }

    // Column norms are the singular values; order them descending with
    // ties kept in original column order.
    let mut norms = vec![0.0f64; cols];
    for (j, norm) in norms.iter_mut().enumerate() {
        *norm = (0..rows).map(|i| b.get(i, j).powi(2)).sum::<f64>().sqrt();
    }
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));

    let sigma_max = order.first().map_or(0.0, |&j| norms[j]);
    let flush = SVD_TOL * sigma_max;

    let mut sigma = vec![0.0f64; cols];
    let mut u = Matrix::zeros(rows, cols);
    let mut vt = Matrix::zeros(cols, cols);
    let mut null_slots = Vec::new();
    for (t, &j) in order.iter().enumerate() {
        let s = if norms[j] <= flush { 0.0 } else { norms[j] };
        sigma[t] = s;
        if s > 0.0 {
            for i in 0..rows {
                u.set(i, t, b.get(i, j) / s);
            }
        } else {
            null_slots.push(t);
        }
        for k in 0..cols {
            vt.set(t, k, v.get(k, j));
        }
    }
    complete_basis(&mut u, &null_slots);

    let mut out = SvdResult { u, sigma, vt };
    apply_sign_convention(&mut out);
    Ok(out)
}

fn gram_entries(b: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
    for i in 0..b.rows() {
        let bp = b.get(i, p);
        let bq = b.get(i, q);
        app += bp * bp;
        aqq += bq * bq;
        apq += bp * bq;
    }
    (app, aqq, apq)
}

fn rotate_cols(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.rows() {
        let mp = m.get(i, p);
        let mq = m.get(i, q);
        m.set(i, p, c * mp - s * mq);
        m.set(i, q, s * mp + c * mq);
    }
}

/// Fills the listed zero-singular-value columns of `u` with a
/// deterministic orthonormal completion drawn from canonical basis
/// vectors (two Gram-Schmidt passes each).
fn complete_basis(u: &mut Matrix, slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let rows = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|t| !slots.contains(t)).collect();
    let mut candidate = 0usize;
    for &slot in slots {
        while candidate < rows {
            let mut vec: Vec<f64> = vec![0.0; rows];
            vec[candidate] = 1.0;
            for _ in 0..2 {
                for &f in &filled {
                    let dot: f64 = (0..rows).map(|i| vec[i] * u.get(i, f)).sum();
                    for (i, entry) in vec.iter_mut().enumerate() {
                        *entry -= dot * u.get(i, f);
                    }
                }
            }
            let norm = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
            candidate += 1;
            if norm > 0.5 {
                for (i, entry) in vec.iter().enumerate() {
                    u.set(i, slot, entry / norm);
                }
                filled.push(slot);
                break;
            }
        }
    }
}

/// Makes the entry of largest magnitude in each left singular vector
/// non-negative, flipping the matching right singular vector with it.
/// Ties go to the lowest row index.
fn apply_sign_convention(svd: &mut SvdResult) {
    let rows = svd.u.rows();
    for t in 0..svd.sigma.len() {
        let mut best_row = 0usize;
        let mut best_mag = -1.0f64;
        for i in 0..rows {
            let mag = svd.u.get(i, t).abs();
            if mag > best_mag {
                best_mag = mag;
                best_row = i;
            }
        }
        if rows > 0 && svd.u.get(best_row, t) < 0.0 {
            for i in 0..rows {
                let v = svd.u.get(i, t);
                svd.u.set(i, t, -v);
            }
            for j in 0..svd.vt.cols() {
                let v = svd.vt.get(t, j);
                svd.vt.set(t, j, -v);
            }
        }
    }
}

// ── Tests ────────────────────────────────────────────────────────────
