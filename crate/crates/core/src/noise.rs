//! Seeded streaming correlated noise `C⁻¹ Z` for banded encoders.
//!
//! Raw draws come from ChaCha20 (`rand_chacha::ChaCha20Rng`, seeded with
//! `seed_from_u64`) through the ziggurat standard normal sampler of
//! `rand_distr`, consumed row-major: row `i` takes exactly `d` draws. A seed
//! therefore fully determines `Z` within this implementation; bit equality
//! with other implementations is not promised.
//!
//! Row `i` of the output is `(zᵢ − Σ_{j<i} C[i, j] rowⱼ) / C[i, i]`, so only
//! the last `b̂ − 1` output rows are kept.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::banded::{BandedLowerTriangular, RowRing};
use crate::dense::DenseMatrix;
use crate::{Error, Result};

/// Band counts above this trigger a memory warning for non-banded encoders.
const LARGE_STATE_WARN: usize = 1024;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    c: BandedLowerTriangular,
    dim: usize,
    sigma: f64,
    ring: RowRing,
    step: usize,
    rng: ChaCha20Rng,
}

/// One privatized release `x̂ᵢ = xᵢ + ζ [C⁻¹Z]ᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivatizedStep {
    pub index: usize,
    pub x_hat: Vec<f64>,
}

impl NoiseStream {
    pub fn new(c: BandedLowerTriangular, sigma: f64, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("noise dimension must be positive".into()));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be finite and nonnegative, got {sigma}"
            )));
        }
        if let Some(index) = c.first_zero_diagonal() {
            return Err(Error::ZeroDiagonal { index });
        }
        let ring = RowRing::new(c.bands() - 1, dim);
        Ok(Self {
            c,
            dim,
            sigma,
            ring,
            step: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    /// Accepts any lower-triangular encoder; its bandwidth is detected and a
    /// full-bandwidth encoder keeps all previous rows.
    pub fn from_dense(c: &DenseMatrix, sigma: f64, dim: usize, seed: u64) -> Result<Self> {
        let bands = c.bandwidth().max(1);
        let banded = BandedLowerTriangular::from_dense(c, bands)?;
        if bands == c.rows() && bands > LARGE_STATE_WARN {
            log::warn!(
                "encoder is not banded: noise state holds {} rows of dimension {dim}",
                bands - 1
            );
        }
        Self::new(banded, sigma, dim, seed)
    }

    pub fn n(&self) -> usize {
        self.c.n()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows emitted so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Rows currently held.
    pub fn state_rows(&self) -> usize {
        self.ring.len()
    }

    /// Rows the state can ever hold (`b̂ − 1`, independent of `n`).
    pub fn state_capacity(&self) -> usize {
        self.ring.capacity()
    }

    /// Next row of `C⁻¹ Z`.
    pub fn next_noise_row(&mut self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.next_noise_row_into(&mut out)?;
        Ok(out)
    }

    /// Writes the next row of `C⁻¹ Z` into `out` (length `d`).
    pub fn next_noise_row_into(&mut self, out: &mut [f64]) -> Result<()> {
        let i = self.step;
        if i >= self.c.n() {
            return Err(Error::StreamExhausted { steps: self.c.n() });
        }
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: out.len(),
            });
        }
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = self.sigma * z;
        }
        let band = self.c.row_band(i);
        let prev = self.ring.len();
        for (k, &cij) in band[..prev].iter().enumerate() {
            let row = self.ring.get(k);
            for (o, r) in out.iter_mut().zip(row) {
                *o -= cij * r;
            }
        }
        let diag = band[prev];
        out.iter_mut().for_each(|o| *o /= diag);
        self.ring.push(out);
        self.step += 1;
        Ok(())
    }

    /// `x̂ᵢ = xᵢ + ζ · next_noise_row()`.
    ///
    /// `x` is the already-clipped, already-summed contribution of step `i`;
    /// clipping is the caller's responsibility.
    pub fn privatize(&mut self, zeta: f64, x: &[f64]) -> Result<PrivatizedStep> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let index = self.step;
        let noise = self.next_noise_row()?;
        let x_hat = x.iter().zip(&noise).map(|(a, z)| a + zeta * z).collect();
        Ok(PrivatizedStep { index, x_hat })
    }
}

/// The raw draw matrix `Z` (`steps × dim`, row-major) a stream with this
/// seed and `sigma` consumes.
pub fn replay_raw(seed: u64, sigma: f64, dim: usize, steps: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..steps * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

/// Lazily privatizes `xs` in index order.
pub fn privatize_stream<I>(
    mut stream: NoiseStream,
    zeta: f64,
    xs: I,
) -> impl Iterator<Item = Result<PrivatizedStep>>
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    xs.into_iter().map(move |x| stream.privatize(zeta, x.as_ref()))
}
