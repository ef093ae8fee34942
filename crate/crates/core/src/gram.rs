//! Symmetric Gram matrices `X = CᵀC` and banded Cholesky factorization.

use crate::banded::BandedLowerTriangular;
use crate::dense::DenseMatrix;
use crate::{Error, Result};

/// Pivots at or below this fraction of the largest diagonal entry are treated
/// as a failure of positive definiteness.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DenseMatrix,
    bands: Option<usize>,
}

impl GramMatrix {
    /// Wraps a dense symmetric matrix. The band count is detected from the
    /// sparsity pattern.
    pub fn new(values: DenseMatrix) -> Result<Self> {
        Self::check_symmetric(&values)?;
        let bw = values.bandwidth().max(1);
        Ok(Self {
            values,
            bands: Some(bw),
        })
    }

    /// Wraps a dense symmetric matrix that is declared `bands`-banded.
    pub fn with_bands(values: DenseMatrix, bands: usize) -> Result<Self> {
        Self::check_symmetric(&values)?;
        let n = values.rows();
        if bands == 0 || bands > n {
            return Err(Error::InvalidArgument(format!(
                "bands must lie in [1, {n}], got {bands}"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) >= bands && values[(i, j)] != 0.0 {
                    return Err(Error::BandViolation {
                        row: i,
                        col: j,
                        bands,
                    });
                }
            }
        }
        Ok(Self {
            values,
            bands: Some(bands),
        })
    }

    pub(crate) fn from_parts(values: DenseMatrix, bands: Option<usize>) -> Self {
        Self { values, bands }
    }

    fn check_symmetric(values: &DenseMatrix) -> Result<()> {
        if !values.is_square() {
            return Err(Error::DimensionMismatch {
                expected: values.rows(),
                got: values.cols(),
            });
        }
        let err = values.symmetry_error();
        if err > SYMMETRY_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "Gram matrix is not symmetric (max asymmetry {err:e})"
            )));
        }
        Ok(())
    }

    pub fn identity(n: usize) -> Self {
        Self {
            values: DenseMatrix::identity(n),
            bands: Some(1),
        }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self {
            values: DenseMatrix::from_diag(d),
            bands: Some(1),
        }
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn bands(&self) -> Option<usize> {
        self.bands
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn into_values(self) -> DenseMatrix {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn diag(&self) -> Vec<f64> {
        self.values.diag()
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut values = self.values.clone();
        values.scale(c);
        Self {
            values,
            bands: self.bands,
        }
    }

    /// Whether every entry with `|i - j| >= b` is zero.
    pub fn is_banded(&self, b: usize) -> bool {
        if let Some(own) = self.bands {
            if own <= b {
                return true;
            }
        }
        self.first_band_violation(b).is_none()
    }

    fn first_band_violation(&self, b: usize) -> Option<(usize, usize)> {
        let n = self.n();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| i.abs_diff(j) >= b && self.values[(i, j)] != 0.0)
    }

    /// Declared bandwidth, or the detected one.
    pub fn effective_bands(&self) -> usize {
        self.bands.unwrap_or_else(|| self.values.bandwidth().max(1))
    }

    /// Symmetric matrix whose lower band is `band`.
    pub fn from_lower_band(band: &BandedLowerTriangular) -> Self {
        let n = band.n();
        let mut dense = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in band.row_start(i)..=i {
                let v = band.get(i, j);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        Self {
            values: dense,
            bands: Some(band.bands()),
        }
    }

    /// Lower band of `X` in compact banded storage.
    pub fn lower_band(&self, bands: usize) -> Result<BandedLowerTriangular> {
        BandedLowerTriangular::from_dense(&lower_triangle(&self.values), bands)
    }

    /// Lower Cholesky factor `L` with `X = L Lᵀ`, `L` sharing `X`'s bandwidth.
    pub fn cholesky(&self) -> Result<BandedLowerTriangular> {
        let b = self.effective_bands();
        let mut band = self.lower_band(b)?;
        cholesky_in_place(&mut band)?;
        Ok(band)
    }

    /// Solves `X Z = R` for an `n × width` row-major right-hand side.
    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if rhs.rows() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: rhs.rows(),
            });
        }
        let l = self.cholesky()?;
        let width = rhs.cols();
        let mut z = rhs.values().to_vec();
        l.solve_rows_in_place(&mut z, width)?;
        l.solve_transpose_rows_in_place(&mut z, width)?;
        DenseMatrix::from_vec(rhs.rows(), width, z)
    }
}

fn lower_triangle(m: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| if j <= i { m[(i, j)] } else { 0.0 })
}

/// Overwrites the lower band of a symmetric positive-definite matrix with its
/// Cholesky factor, in `O(n · b̂²)`.
pub(crate) fn cholesky_in_place(band: &mut BandedLowerTriangular) -> Result<()> {
    let n = band.n();
    let b = band.bands();
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(band.diag_entry(i)));
    let threshold = PIVOT_TOLERANCE * max_diag;
    if max_diag <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            index: 0,
            pivot: band.diag_entry(0),
        });
    }
    let data = band.data_mut();
    for i in 0..n {
        let lo_i = (i + 1).saturating_sub(b);
        for j in lo_i..=i {
            let lo = lo_i.max((j + 1).saturating_sub(b));
            // entry (r, c) lives at r*b + b-1-r+c, so both ranges are contiguous
            let ri = i * b + b - 1 - i;
            let rj = j * b + b - 1 - j;
            let dot: f64 = data[ri + lo..ri + j]
                .iter()
                .zip(&data[rj + lo..rj + j])
                .map(|(p, q)| p * q)
                .sum();
            let s = data[ri + j] - dot;
            if i == j {
                if !(s > threshold) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                data[i * b + b - 1] = s.sqrt();
            } else {
                data[i * b + b - 1 - (i - j)] = s / data[j * b + b - 1];
            }
        }
    }
    Ok(())
}

/// Factors a banded SPD Gram matrix as `X = CᵀC` with `C` lower triangular
/// and with the same bandwidth.
///
/// With `J` the exchange matrix, `Y = J X J` is factored as `Y = L Lᵀ`, and
/// `C = J Lᵀ J`, which is lower triangular and satisfies
/// `CᵀC = J L Lᵀ J = X`.
pub fn banded_cholesky(x: &GramMatrix) -> Result<BandedLowerTriangular> {
    let n = x.n();
    let b = match x.bands() {
        Some(b) => {
            if let Some((row, col)) = x.first_band_violation(b) {
                return Err(Error::BandViolation {
                    row,
                    col,
                    bands: b,
                });
            }
            b
        }
        None => x.effective_bands(),
    };
    let mut y = BandedLowerTriangular::zeros(n, b)?;
    for i in 0..n {
        for j in y.row_start(i)..=i {
            y.set(i, j, x.get(n - 1 - i, n - 1 - j));
        }
    }
    cholesky_in_place(&mut y).map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot } => Error::NotPositiveDefinite {
            index: n - 1 - index,
            pivot,
        },
        other => other,
    })?;
    let mut c = BandedLowerTriangular::zeros(n, b)?;
    for i in 0..n {
        for j in c.row_start(i)..=i {
            c.set(i, j, y.get(n - 1 - j, n - 1 - i));
        }
    }
    Ok(c)
}

/// `‖CᵀC − X‖_max`.
pub fn factor_residual(c: &BandedLowerTriangular, x: &GramMatrix) -> f64 {
    c.gram().values().max_abs_diff(x.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factors_to_identity() {
        let c = banded_cholesky(&GramMatrix::identity(5)).unwrap();
        assert_eq!(c, BandedLowerTriangular::identity(5));
    }

    #[test]
    fn two_by_two_closed_form() {
        // X = [[1, r], [r, 1]], C = [[c11, 0], [c21, c22]] with CᵀC = X:
        // c22² = 1, c21 c22 = r, c11² + c21² = 1.
        let r = 0.5;
        let x = GramMatrix::with_bands(
            DenseMatrix::from_rows(&[vec![1.0, r], vec![r, 1.0]]).unwrap(),
            2,
        )
        .unwrap();
        let c = banded_cholesky(&x).unwrap();
        assert!((c.get(1, 1) - 1.0).abs() < 1e-15);
        assert!((c.get(1, 0) - r).abs() < 1e-15);
        assert!((c.get(0, 0) - (1.0 - r * r).sqrt()).abs() < 1e-15);
        assert!(factor_residual(&c, &x) < 1e-12);
    }

    #[test]
    fn indefinite_rejected_with_index() {
        let x = GramMatrix::with_bands(
            DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap(),
            2,
        )
        .unwrap();
        assert!(matches!(
            banded_cholesky(&x),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(x.cholesky(), Err(Error::NotPositiveDefinite { index: 1, .. })));
    }

    #[test]
    fn band_violation_on_construction() {
        let mut m = DenseMatrix::identity(4);
        m[(0, 3)] = 0.1;
        m[(3, 0)] = 0.1;
        assert!(matches!(
            GramMatrix::with_bands(m.clone(), 2),
            Err(Error::BandViolation { .. })
        ));
        assert_eq!(GramMatrix::new(m).unwrap().bands(), Some(4));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(GramMatrix::new(m).is_err());
    }

    #[test]
    fn solve_against_identity() {
        let x = GramMatrix::from_diag(&[2.0, 4.0]);
        let z = x.solve(&DenseMatrix::identity(2)).unwrap();
        let d = z.diag();
        assert!((d[0] - 0.5).abs() < 1e-15 && (d[1] - 0.25).abs() < 1e-15, "{d:?}");
    }
}
