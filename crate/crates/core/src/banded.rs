//! Compact banded lower-triangular matrices and their streaming kernels.
//!
//! A `b̂`-banded lower-triangular `n × n` matrix `C` is stored row-major as
//! an `n × b̂` array. Row `i` holds `C[i, i-b̂+1 ..= i]`, left-padded with
//! zeros where the column index would be negative, so the last slot of each
//! row is the diagonal.
//!
//! Multiplication (`y = C x`) and inverse multiplication (`x = C⁻¹ y`) both
//! only need the previous `b̂ - 1` inputs (resp. outputs), which is what the
//! streaming types [`MatvecStream`] and [`InvMatvecStream`] keep.

use crate::dense::DenseMatrix;
use crate::gram::GramMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedLowerTriangular {
    n: usize,
    bands: usize,
    data: Vec<f64>,
}

impl BandedLowerTriangular {
    /// Builds a matrix from compact storage. Padding slots must be exactly 0.
    pub fn new(n: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || bands == 0 || bands > n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= bands <= n and n >= 1, got n = {n}, bands = {bands}"
            )));
        }
        if data.len() != n * bands {
            return Err(Error::DimensionMismatch {
                expected: n * bands,
                got: data.len(),
            });
        }
        for i in 0..bands.saturating_sub(1).min(n) {
            for p in 0..(bands - 1 - i) {
                if data[i * bands + p] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "padding slot {p} of row {i} is nonzero"
                    )));
                }
            }
        }
        Ok(Self { n, bands, data })
    }

    pub fn zeros(n: usize, bands: usize) -> Result<Self> {
        Self::new(n, bands, vec![0.0; n * bands])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self {
            n: d.len(),
            bands: 1,
            data: d.to_vec(),
        }
    }

    /// Compacts a dense lower-triangular matrix, rejecting entries outside the band.
    pub fn from_dense(m: &DenseMatrix, bands: usize) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        let n = m.rows();
        let mut out = Self::zeros(n, bands)?;
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v == 0.0 {
                    continue;
                }
                if j > i || i - j >= bands {
                    return Err(Error::BandViolation {
                        row: i,
                        col: j,
                        bands,
                    });
                }
                out.set(i, j, v);
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in self.row_start(i)..=i {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Compact storage, `n × bands`, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// First column index that may be nonzero in row `i`.
    #[inline]
    pub fn row_start(&self, i: usize) -> usize {
        (i + 1).saturating_sub(self.bands)
    }

    /// Entries `C[i, row_start(i) ..= i]`, padding excluded.
    #[inline]
    pub fn row_band(&self, i: usize) -> &[f64] {
        let lo = self.row_start(i);
        let base = i * self.bands;
        &self.data[base + self.bands - 1 - (i - lo)..base + self.bands]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j >= self.bands {
            0.0
        } else {
            self.data[i * self.bands + self.bands - 1 - (i - j)]
        }
    }

    /// Sets an in-band entry. Panics when `(i, j)` is outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j <= i && i - j < self.bands, "({i}, {j}) outside band");
        self.data[i * self.bands + self.bands - 1 - (i - j)] = v;
    }

    #[inline]
    pub fn diag_entry(&self, i: usize) -> f64 {
        self.data[i * self.bands + self.bands - 1]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.diag_entry(i)).collect()
    }

    /// Squared ℓ₂ norms of the columns of `C`.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = self.row_start(i);
            for (k, &v) in self.row_band(i).iter().enumerate() {
                out[lo + k] += v * v;
            }
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// Returns the index of the first zero diagonal entry, if any.
    pub fn first_zero_diagonal(&self) -> Option<usize> {
        (0..self.n).find(|&i| self.diag_entry(i) == 0.0)
    }

    fn check_invertible(&self) -> Result<()> {
        match self.first_zero_diagonal() {
            Some(index) => Err(Error::ZeroDiagonal { index }),
            None => Ok(()),
        }
    }

    /// `y = C x` in `O(n · b̂)`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| {
                let lo = self.row_start(i);
                let mut s = 0.0;
                for (c, xj) in self.row_band(i).iter().zip(&x[lo..=i]) {
                    s += c * xj;
                }
                s
            })
            .collect())
    }

    /// Solves `C x = y` by forward substitution in `O(n · b̂)`.
    pub fn inv_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: y.len(),
            });
        }
        self.check_invertible()?;
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = self.row_start(i);
            let band = self.row_band(i);
            let mut s = 0.0;
            for (c, xj) in band[..band.len() - 1].iter().zip(&x[lo..i]) {
                s += c * xj;
            }
            x[i] = (y[i] - s) / band[band.len() - 1];
        }
        Ok(x)
    }

    /// Multiplies `C` into an `n × width` row-major block: `Y = C X`.
    pub fn mul_rows(&self, block: &[f64], width: usize) -> Result<Vec<f64>> {
        self.check_block(block.len(), width)?;
        let mut out = vec![0.0; block.len()];
        for i in 0..self.n {
            let lo = self.row_start(i);
            let dst = &mut out[i * width..(i + 1) * width];
            for (k, &c) in self.row_band(i).iter().enumerate() {
                let src = &block[(lo + k) * width..(lo + k + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
        Ok(out)
    }

    /// In place `X ← C⁻¹ X` for an `n × width` row-major block.
    ///
    /// Per column the arithmetic is identical to [`Self::inv_matvec`], so the
    /// results agree bit for bit.
    pub fn solve_rows_in_place(&self, block: &mut [f64], width: usize) -> Result<()> {
        self.check_block(block.len(), width)?;
        self.check_invertible()?;
        let mut acc = vec![0.0; width];
        self.solve_rows_unchecked(block, width, &mut acc);
        Ok(())
    }

    pub(crate) fn solve_rows_unchecked(&self, block: &mut [f64], width: usize, acc: &mut [f64]) {
        for i in 0..self.n {
            let lo = self.row_start(i);
            let band = self.row_band(i);
            acc.iter_mut().for_each(|a| *a = 0.0);
            let (done, rest) = block.split_at_mut(i * width);
            for (k, &c) in band[..band.len() - 1].iter().enumerate() {
                let src = &done[(lo + k) * width..(lo + k + 1) * width];
                for (a, s) in acc.iter_mut().zip(src) {
                    *a += c * s;
                }
            }
            let d = band[band.len() - 1];
            for (x, a) in rest[..width].iter_mut().zip(acc.iter()) {
                *x = (*x - a) / d;
            }
        }
    }

    /// In place `X ← C⁻ᵀ X` (back substitution with the transpose).
    pub fn solve_transpose_rows_in_place(&self, block: &mut [f64], width: usize) -> Result<()> {
        self.check_block(block.len(), width)?;
        self.check_invertible()?;
        let mut acc = vec![0.0; width];
        self.solve_transpose_rows_unchecked(block, width, &mut acc);
        Ok(())
    }

    pub(crate) fn solve_transpose_rows_unchecked(
        &self,
        block: &mut [f64],
        width: usize,
        acc: &mut [f64],
    ) {
        let n = self.n;
        for i in (0..n).rev() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let hi = (i + self.bands).min(n);
            let (head, tail) = block.split_at_mut((i + 1) * width);
            for j in (i + 1)..hi {
                let c = self.data[j * self.bands + self.bands - 1 - (j - i)];
                let src = &tail[(j - i - 1) * width..(j - i) * width];
                for (a, s) in acc.iter_mut().zip(src) {
                    *a += c * s;
                }
            }
            let d = self.diag_entry(i);
            for (x, a) in head[i * width..].iter_mut().zip(acc.iter()) {
                *x = (*x - a) / d;
            }
        }
    }

    fn check_block(&self, len: usize, width: usize) -> Result<()> {
        if len != self.n * width {
            return Err(Error::DimensionMismatch {
                expected: self.n * width,
                got: len,
            });
        }
        Ok(())
    }

    /// `X = CᵀC`, which is `b̂`-banded.
    pub fn gram(&self) -> GramMatrix {
        let n = self.n;
        let mut x = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let lo = self.row_start(i);
            let band = self.row_band(i);
            for (a, &ca) in band.iter().enumerate() {
                for (b, &cb) in band.iter().enumerate() {
                    x[(lo + a, lo + b)] += ca * cb;
                }
            }
        }
        GramMatrix::from_parts(x, Some(self.bands))
    }

    pub fn matvec_stream(&self) -> MatvecStream<'_> {
        MatvecStream {
            c: self,
            ring: RowRing::new(self.bands - 1, 1),
            step: 0,
        }
    }

    pub fn inv_matvec_stream(&self) -> Result<InvMatvecStream<'_>> {
        self.check_invertible()?;
        Ok(InvMatvecStream {
            c: self,
            ring: RowRing::new(self.bands - 1, 1),
            step: 0,
        })
    }
}

/// Fixed-capacity ring of `width`-length rows, iterated oldest first.
#[derive(Debug, Clone)]
pub(crate) struct RowRing {
    width: usize,
    cap: usize,
    data: Vec<f64>,
    head: usize,
    len: usize,
}

impl RowRing {
    pub(crate) fn new(cap: usize, width: usize) -> Self {
        Self {
            width,
            cap,
            data: vec![0.0; cap * width],
            head: 0,
            len: 0,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn capacity(&self) -> usize {
        self.cap
    }

    /// `k`-th oldest row.
    #[inline]
    pub(crate) fn get(&self, k: usize) -> &[f64] {
        let slot = (self.head + k) % self.cap;
        &self.data[slot * self.width..(slot + 1) * self.width]
    }

    pub(crate) fn push(&mut self, row: &[f64]) {
        if self.cap == 0 {
            return;
        }
        let slot = (self.head + self.len) % self.cap;
        self.data[slot * self.width..(slot + 1) * self.width].copy_from_slice(row);
        if self.len < self.cap {
            self.len += 1;
        } else {
            self.head = (self.head + 1) % self.cap;
        }
    }
}

/// Streaming `y = C x`: push `xᵢ`, receive `yᵢ` immediately.
#[derive(Debug, Clone)]
pub struct MatvecStream<'a> {
    c: &'a BandedLowerTriangular,
    ring: RowRing,
    step: usize,
}

impl MatvecStream<'_> {
    pub fn push(&mut self, x: f64) -> Result<f64> {
        let i = self.step;
        if i >= self.c.n {
            return Err(Error::StreamExhausted { steps: self.c.n });
        }
        let band = self.c.row_band(i);
        let prev = self.ring.len();
        let mut s = 0.0;
        for (k, &c) in band[..prev].iter().enumerate() {
            s += c * self.ring.get(k)[0];
        }
        s += band[prev] * x;
        self.ring.push(&[x]);
        self.step += 1;
        Ok(s)
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn state_len(&self) -> usize {
        self.ring.capacity()
    }
}

/// Streaming `x = C⁻¹ y`: push `yᵢ`, receive `xᵢ` immediately.
#[derive(Debug, Clone)]
pub struct InvMatvecStream<'a> {
    c: &'a BandedLowerTriangular,
    ring: RowRing,
    step: usize,
}

impl InvMatvecStream<'_> {
    pub fn push(&mut self, y: f64) -> Result<f64> {
        let i = self.step;
        if i >= self.c.n {
            return Err(Error::StreamExhausted { steps: self.c.n });
        }
        let band = self.c.row_band(i);
        let prev = self.ring.len();
        let mut s = 0.0;
        for (k, &c) in band[..prev].iter().enumerate() {
            s += c * self.ring.get(k)[0];
        }
        let x = (y - s) / band[prev];
        self.ring.push(&[x]);
        self.step += 1;
        Ok(x)
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn state_len(&self) -> usize {
        self.ring.capacity()
    }
}
