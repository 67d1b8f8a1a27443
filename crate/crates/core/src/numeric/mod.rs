//! Dense/block tensor primitives and a finite-difference harness.
//!
//! Everything downstream (mask construction, the sparse kernel, the dense
//! oracle, the benchmark) builds on the row-major [`Matrix`] and the virtual
//! block reshape [`BlockView`]. All verification math runs in f64.

mod io;

pub use io::{read_matrix, write_matrix, MATRIX_FORMAT_VERSION, MATRIX_MAGIC};

use crate::error::{Error, Result};

/// Dense row-major f64 matrix. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data, rejecting shape mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry {} at flat index {bad}",
                data[bad]
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// self (m x p) * other (p x n).
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                let src = other.row(k);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// self (m x d) * other^T (n x d) -> m x n.
    pub fn matmul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::invalid(format!(
                "matmul_transpose shape mismatch: {}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.set(i, j, dot(self.row(i), other.row(j)));
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Virtual reshape of an n x d matrix into ceil(n/b) blocks of b rows.
/// Rows past the end are zero pads; no data is copied.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    base: &'a Matrix,
    block_size: usize,
    num_blocks: usize,
    pad_len: usize,
}

impl<'a> BlockView<'a> {
    pub fn base(&self) -> &Matrix {
        self.base
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn pad_len(&self) -> usize {
        self.pad_len
    }

    pub fn dim(&self) -> usize {
        self.base.cols()
    }

    /// Row `s` of block `i`, or `None` when the row is a zero pad.
    pub fn block_row(&self, i: usize, s: usize) -> Option<&'a [f64]> {
        debug_assert!(i < self.num_blocks && s < self.block_size);
        let r = i * self.block_size + s;
        if r < self.base.rows() {
            Some(self.base.row(r))
        } else {
            None
        }
    }

    /// Entry (i, s, u) of the reshaped tensor; pads read as zero.
    pub fn get(&self, i: usize, s: usize, u: usize) -> f64 {
        match self.block_row(i, s) {
            Some(row) => row[u],
            None => 0.0,
        }
    }
}

/// Reshapes `m` into ceil(n/b) blocks of `b` rows each (zero-padded tail).
pub fn block_reshape(m: &Matrix, b: usize) -> Result<BlockView<'_>> {
    if b == 0 {
        return Err(Error::invalid("block size must be >= 1"));
    }
    let num_blocks = m.rows().div_ceil(b);
    Ok(BlockView {
        base: m,
        block_size: b,
        num_blocks,
        pad_len: num_blocks * b - m.rows(),
    })
}

/// Score block (i, j): entry (s, t) = sum_u Q'[i,s,u] * K'[j,t,u], i.e. the
/// b x b tile of the dense Q K^T at block coordinates (i, j). Pad rows on
/// either side score zero.
pub fn block_score(qv: &BlockView<'_>, kv: &BlockView<'_>, i: usize, j: usize) -> Result<Matrix> {
    if qv.dim() != kv.dim() || qv.block_size() != kv.block_size() {
        return Err(Error::invalid(
            "query/key block views disagree on d or block size",
        ));
    }
    if i >= qv.num_blocks() || j >= kv.num_blocks() {
        return Err(Error::invalid(format!(
            "block index ({i}, {j}) out of range ({} x {})",
            qv.num_blocks(),
            kv.num_blocks()
        )));
    }
    let b = qv.block_size();
    let mut out = Matrix::zeros(b, b);
    for s in 0..b {
        let Some(q_row) = qv.block_row(i, s) else {
            continue;
        };
        for t in 0..b {
            if let Some(k_row) = kv.block_row(j, t) {
                out.set(s, t, dot(q_row, k_row));
            }
        }
    }
    Ok(out)
}

/// Softmax of `scale * scores` restricted to the allowed set. Disallowed
/// entries are exactly zero in the output; the allowed entries sum to one.
pub fn masked_row_softmax(scores: &[f64], allowed: &[bool], scale: f64) -> Result<Vec<f64>> {
    if scores.len() != allowed.len() {
        return Err(Error::invalid(format!(
            "scores length {} != allowed length {}",
            scores.len(),
            allowed.len()
        )));
    }
    let mut max = f64::NEG_INFINITY;
    for (s, &a) in scores.iter().zip(allowed) {
        if a {
            max = max.max(scale * s);
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::ContractViolation(
            "masked_row_softmax called with no allowed entries".into(),
        ));
    }
    let mut out = vec![0.0; scores.len()];
    let mut sum = 0.0;
    for (o, (s, &a)) in out.iter_mut().zip(scores.iter().zip(allowed)) {
        if a {
            let e = (scale * s - max).exp();
            *o = e;
            sum += e;
        }
    }
    for (o, &a) in out.iter_mut().zip(allowed) {
        if a {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Central-difference gradient of a scalar function of a matrix:
/// (f(x + eps e) - f(x - eps e)) / (2 eps) per entry.
pub fn finite_diff_gradient<F>(mut f: F, x: &Matrix, eps: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = probe.get(r, c);
            probe.set(r, c, orig + eps);
            let plus = f(&probe)?;
            probe.set(r, c, orig - eps);
            let minus = f(&probe)?;
            probe.set(r, c, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite objective at perturbed entry ({r}, {c})"
                )));
            }
            grad.set(r, c, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(grad)
}
