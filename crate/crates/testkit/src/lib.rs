//! Independent reference oracles for `bandmf` tests.
//!
//! Nothing here depends on `bandmf`: patterns are enumerated exhaustively,
//! linear algebra goes through `nalgebra`, and the RDP reference evaluates
//! the subsampled-Gaussian moment by direct summation or numerical
//! integration of its defining integral.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use nalgebra;
use nalgebra::DMatrix;

/// Largest `n` accepted by [`enumerate_patterns`].
pub const ENUMERATE_MAX_N: usize = 20;
/// Largest `n` accepted by [`true_l2_sensitivity_small`].
pub const TRUE_SENS_MAX_N: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    TooLarge { n: usize, limit: usize },
    Overflow,
    InvalidArgument(String),
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleError::TooLarge { n, limit } => write!(f, "n = {n} exceeds oracle limit {limit}"),
            OracleError::Overflow => write!(f, "direct summation overflowed"),
            OracleError::InvalidArgument(s) => write!(f, "{s}"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Every index set in `[0, n)` with pairwise gaps `>= b` and at most `k_cap`
/// elements, including the empty set. Each set is strictly increasing.
pub fn enumerate_patterns(n: usize, b: usize, k_cap: usize) -> Result<Vec<Vec<usize>>, OracleError> {
    if n > ENUMERATE_MAX_N {
        return Err(OracleError::TooLarge {
            n,
            limit: ENUMERATE_MAX_N,
        });
    }
    if b == 0 {
        return Err(OracleError::InvalidArgument("separation must be positive".into()));
    }
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize > k_cap {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        if set.windows(2).all(|w| w[1] - w[0] >= b) {
            out.push(set);
        }
    }
    Ok(out)
}

/// `P(n, b, k) = P(n − 1, b, k) + P(n − b, b, k − 1)`, `P(n <= 0, ·, ·) = 1`,
/// `P(·, ·, 0) = 1`: the number of patterns [`enumerate_patterns`] yields.
pub fn pattern_count(n: i64, b: i64, k: i64) -> u64 {
    if n <= 0 || k == 0 {
        return 1;
    }
    pattern_count(n - 1, b, k) + pattern_count(n - b, b, k - 1)
}

/// The `(k, b)` patterns `{o, o + b, …}` for `o < b`, truncated to `[0, n)`.
pub fn fixed_kb_patterns(n: usize, k: usize, b: usize) -> Vec<Vec<usize>> {
    (0..b.min(n))
        .map(|o| (0..k).map(|j| o + j * b).filter(|&i| i < n).collect())
        .collect()
}

/// `sqrt(max_π Σ_{i,j ∈ π} |X[i, j]|)` over the given patterns.
pub fn abs_sum_bound(x: &DMatrix<f64>, patterns: &[Vec<usize>]) -> f64 {
    patterns
        .iter()
        .map(|p| {
            p.iter()
                .flat_map(|&i| p.iter().map(move |&j| (i, j)))
                .map(|(i, j)| x[(i, j)].abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// `max_π max_{u ∈ {±1}^π} ‖C u‖₂` with `d = 1`.
///
/// This equals the sensitivity when every restricted Gram block is
/// nonnegative; for mixed signs it may fall below the `d → ∞` supremum.
pub fn true_l2_sensitivity_small(c: &DMatrix<f64>, patterns: &[Vec<usize>]) -> Result<f64, OracleError> {
    let n = c.ncols();
    if n > TRUE_SENS_MAX_N {
        return Err(OracleError::TooLarge {
            n,
            limit: TRUE_SENS_MAX_N,
        });
    }
    let mut best = 0.0_f64;
    let mut col = vec![0.0; c.nrows()];
    for p in patterns {
        if p.is_empty() {
            continue;
        }
        // first sign fixed to +1 by symmetry
        for signs in 0u32..(1u32 << (p.len() - 1)) {
            col.iter_mut().for_each(|v| *v = 0.0);
            for (t, &j) in p.iter().enumerate() {
                let s = if t > 0 && signs >> (t - 1) & 1 == 1 { -1.0 } else { 1.0 };
                for (r, v) in col.iter_mut().enumerate() {
                    *v += s * c[(r, j)];
                }
            }
            best = best.max(col.iter().map(|v| v * v).sum::<f64>());
        }
    }
    Ok(best.sqrt())
}

/// `tr[T X⁻¹]` through a dense `nalgebra` inverse.
pub fn dense_loss(t: &DMatrix<f64>, x: &DMatrix<f64>) -> Option<f64> {
    let inv = x.clone().try_inverse()?;
    Some((t * inv).trace())
}

/// `−X⁻¹ T X⁻¹` through a dense `nalgebra` inverse.
pub fn dense_loss_grad(t: &DMatrix<f64>, x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = x.clone().try_inverse()?;
    Some(-(&inv * t * &inv))
}

/// Lower Cholesky factor `L` with `X = L Lᵀ`.
pub fn dense_cholesky(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Some(x.clone().cholesky()?.l())
}

/// Central finite differences of `f` at `x` with step `h` per coordinate.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error `|a − b| / max(|b|, floor)` between two gradients.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// RDP at integer order `alpha` of the Poisson-subsampled Gaussian by direct
/// summation of `Σ_i C(α, i) q^i (1 − q)^{α − i} exp((i² − i) / (2σ²))` in
/// plain floating point.
pub fn reference_rdp_subsampled(q: f64, sigma: f64, alpha: u32) -> Result<f64, OracleError> {
    check_rdp_args(q, sigma, alpha)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    let a = alpha as f64;
    let mut binom = 1.0_f64;
    let mut total = 0.0_f64;
    for i in 0..=alpha {
        let fi = i as f64;
        if i > 0 {
            binom = binom * (a - fi + 1.0) / fi;
        }
        let term = binom * q.powi(i as i32) * (1.0 - q).powi((alpha - i) as i32)
            * ((fi * fi - fi) / (2.0 * sigma * sigma)).exp();
        total += term;
        if !total.is_finite() {
            return Err(OracleError::Overflow);
        }
    }
    Ok(total.ln() / (a - 1.0))
}

/// The same RDP value from the integral
/// `∫ N(z; 0, σ²) ((1 − q) + q exp((2z − 1) / (2σ²)))^α dz`, evaluated with
/// the trapezoid rule in log space. Valid for any `alpha > 1` and immune to
/// overflow.
pub fn reference_rdp_quadrature(q: f64, sigma: f64, alpha: f64) -> Result<f64, OracleError> {
    if !(alpha > 1.0) || !(sigma > 0.0) || !(0.0..=1.0).contains(&q) {
        return Err(OracleError::InvalidArgument("need alpha > 1, sigma > 0, q in [0, 1]".into()));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let s2 = sigma * sigma;
    let log_f = |z: f64| {
        let shift = (2.0 * z - 1.0) / (2.0 * s2);
        // ln((1 − q) + q e^shift), stable for either sign of shift
        let mix = if q == 1.0 {
            shift
        } else {
            let (x, y) = ((1.0 - q).ln(), q.ln() + shift);
            let hi = x.max(y);
            hi + ((x - hi).exp() + (y - hi).exp()).ln()
        };
        -z * z / (2.0 * s2) - 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + alpha * mix
    };
    // the integrand is unimodal with its mode in [0, α]
    let lo = -40.0 * sigma - 1.0;
    let hi = alpha + 40.0 * sigma + 1.0;
    let steps = 400_000usize;
    let h = (hi - lo) / steps as f64;
    let vals: Vec<f64> = (0..=steps).map(|t| log_f(lo + t as f64 * h)).collect();
    let peak = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (t, v) in vals.iter().enumerate() {
        let w = if t == 0 || t == steps { 0.5 } else { 1.0 };
        sum += w * (v - peak).exp();
    }
    Ok((peak + (sum * h).ln()) / (alpha - 1.0))
}

/// Direct summation when it stays finite, quadrature otherwise.
pub fn reference_rdp(q: f64, sigma: f64, alpha: u32) -> Result<f64, OracleError> {
    match reference_rdp_subsampled(q, sigma, alpha) {
        Err(OracleError::Overflow) => reference_rdp_quadrature(q, sigma, alpha as f64),
        other => other,
    }
}

fn check_rdp_args(q: f64, sigma: f64, alpha: u32) -> Result<(), OracleError> {
    if alpha < 2 || !(sigma > 0.0) || !(0.0..=1.0).contains(&q) {
        return Err(OracleError::InvalidArgument(
            "need integer alpha >= 2, sigma > 0, q in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// `Φ(x)` by Simpson integration of the normal density from a far left
/// cutoff; slow but independent of any `erf` implementation.
pub fn normal_cdf_reference(x: f64) -> f64 {
    if x < -38.0 {
        return 0.0;
    }
    let lo = -38.0;
    let steps = 200_000usize;
    let h = (x - lo) / steps as f64;
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(lo) + pdf(x);
    for t in 1..steps {
        let w = if t % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(lo + t as f64 * h);
    }
    s * h / 3.0
}

/// Deterministic pseudo-random numbers in `[0, 1)` for reproducible test
/// instances (SplitMix64).
#[derive(Debug, Clone)]
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_pattern_sets() {
        let p = enumerate_patterns(3, 1, 3).unwrap();
        assert_eq!(p.len(), 8);
        let p = enumerate_patterns(5, 5, 3).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|s| s.len() <= 1));
        let p = enumerate_patterns(6, 3, 2).unwrap();
        let gap3: Vec<_> = p.iter().filter(|s| s.len() == 2 && s[1] - s[0] == 3).cloned().collect();
        assert_eq!(gap3, vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
        assert_eq!(fixed_kb_patterns(6, 2, 3), gap3);
        assert!(enumerate_patterns(21, 1, 1).is_err());
    }

    #[test]
    fn counts_match_recurrence() {
        for n in 0..=14 {
            for b in 1..=5 {
                for k in 0..=5 {
                    let got = enumerate_patterns(n, b, k).unwrap().len() as u64;
                    assert_eq!(got, pattern_count(n as i64, b as i64, k as i64), "{n} {b} {k}");
                }
            }
        }
    }

    #[test]
    fn identity_sensitivity() {
        let c = DMatrix::<f64>::identity(6, 6);
        let p = enumerate_patterns(6, 2, 3).unwrap();
        let s = true_l2_sensitivity_small(&c, &p).unwrap();
        assert!((s - 3f64.sqrt()).abs() < 1e-15);
        assert!((abs_sum_bound(&c, &p) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rdp_reference_limits() {
        assert_eq!(reference_rdp_subsampled(0.0, 1.0, 8).unwrap(), 0.0);
        let full = reference_rdp_subsampled(1.0, 2.0, 4).unwrap();
        assert!((full - 4.0 / 8.0).abs() < 1e-12);
        assert_eq!(reference_rdp_subsampled(1.0, 0.5, 64), Err(OracleError::Overflow));
        let quad = reference_rdp_quadrature(1.0, 0.5, 64.0).unwrap();
        assert!((quad - 128.0).abs() < 1e-6 * 128.0, "{quad}");
    }

    #[test]
    fn summation_and_quadrature_agree() {
        for &(q, s, a) in &[(0.01, 1.0, 4u32), (0.1, 2.0, 16), (0.5, 2.0, 4), (0.001, 0.5, 2)] {
            let d = reference_rdp_subsampled(q, s, a).unwrap();
            let i = reference_rdp_quadrature(q, s, a as f64).unwrap();
            assert!((d - i).abs() <= 1e-8 * d.abs().max(1e-300), "{q} {s} {a}: {d} {i}");
        }
    }

    #[test]
    fn finite_differences_of_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn cdf_reference() {
        assert!((normal_cdf_reference(0.0) - 0.5).abs() < 1e-12);
        assert!((normal_cdf_reference(1.959963984540054) - 0.975).abs() < 1e-10);
    }
}
