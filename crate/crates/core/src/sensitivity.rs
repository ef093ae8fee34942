//! ℓ₂ sensitivity of a factorization `C` (through its Gram matrix
//! `X = CᵀC`) under participation schemas.
//!
//! All values are in units of the per-example clip norm. For a pattern `π`
//! (the set of steps one example may contribute to),
//! `max_π Σ_{i,j ∈ π} |X[i, j]|` upper-bounds the squared sensitivity and is
//! tight when every restricted block `X[π, π]` is elementwise nonnegative.
//! When `X` is `b`-banded and patterns are `b`-separated, all off-diagonal
//! terms inside a pattern vanish and only the diagonal matters, which makes
//! the banded computations exact.

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::gram::GramMatrix;
use crate::{Error, Result};

/// Largest `n` accepted by [`sens_bruteforce`].
pub const BRUTEFORCE_MAX_N: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParticipationSchema {
    /// Each example contributes to at most one step.
    Single,
    /// Each example contributes to every step.
    EveryStep,
    /// At most `k` participations, exactly `b` steps apart.
    FixedKb { k: usize, b: usize },
    /// Participations at least `b` steps apart, at most `k_cap` of them.
    MinSep { b: usize, k_cap: usize },
}

impl ParticipationSchema {
    /// `b`-min-sep participation with the worst-case cap `⌈n / b⌉`.
    pub fn min_sep_default(n: usize, b: usize) -> Self {
        ParticipationSchema::MinSep {
            b,
            k_cap: max_participations(n, b),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            ParticipationSchema::Single | ParticipationSchema::EveryStep => Ok(()),
            ParticipationSchema::FixedKb { k, b } => {
                if k == 0 || b == 0 {
                    return Err(Error::InfeasibleSchema("k and b must be positive".into()));
                }
                if (k - 1) * b >= n {
                    return Err(Error::InfeasibleSchema(format!(
                        "(k - 1) * b = {} must be < n = {n}",
                        (k - 1) * b
                    )));
                }
                Ok(())
            }
            ParticipationSchema::MinSep { b, k_cap } => {
                if k_cap == 0 || b == 0 {
                    return Err(Error::InfeasibleSchema("k_cap and b must be positive".into()));
                }
                let max = max_participations(n, b);
                if k_cap > max {
                    return Err(Error::InfeasibleSchema(format!(
                        "k_cap = {k_cap} exceeds ceil(n / b) = {max}"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub value: f64,
    /// `true` when `value` is the sensitivity itself, `false` for an upper bound.
    pub exact: bool,
    pub schema: ParticipationSchema,
}

/// Worst-case number of `b`-separated participations in `n` steps.
pub fn max_participations(n: usize, b: usize) -> usize {
    n.div_ceil(b)
}

/// Maximum of `Σ_{i ∈ π} v_i` over index sets with pairwise gaps `>= b` and
/// at most `k` elements (the empty set counts, so the result is `>= 0`).
///
/// Runs the recursion `F[i, m] = max(v_i + F[i + b, m - 1], F[i + 1, m])`
/// in `O(n · k)` time and `O(n)` memory.
///
/// # Panics
/// If `b == 0`.
pub fn vec_sens(b: usize, v: &[f64], k: usize) -> f64 {
    assert!(b >= 1, "separation must be at least 1");
    let n = v.len();
    let mut prev = vec![0.0; n + b + 1];
    let mut cur = vec![0.0; n + b + 1];
    for _ in 0..k {
        cur[n] = 0.0;
        for i in (0..n).rev() {
            let take = v[i] + prev[i + b];
            let skip = cur[i + 1];
            cur[i] = if take > skip { take } else { skip };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[0]
}

/// Exact `b`-min-sep sensitivity of a `b`-banded Gram matrix.
pub fn sens_minsep_banded(x: &GramMatrix, b: usize, k_cap: usize) -> Result<SensitivityReport> {
    let schema = ParticipationSchema::MinSep { b, k_cap };
    schema.validate(x.n())?;
    if !x.is_banded(b) {
        return Err(Error::InvalidArgument(format!(
            "Gram matrix is not {b}-banded; use the general upper bound"
        )));
    }
    let diag = x.diag();
    let value = if diag.iter().all(|&d| d == diag[0]) {
        diag[0].sqrt() * (k_cap as f64).sqrt()
    } else {
        vec_sens(b, &diag, k_cap).sqrt()
    };
    Ok(SensitivityReport {
        value,
        exact: true,
        schema,
    })
}

/// Upper bound on `b`-min-sep sensitivity for an arbitrary Gram matrix.
///
/// Each row gets its own best pattern (`v_i = VecSens(|X[i, :]|)`), then the
/// outer pattern is chosen over `v`. Rows are independent and may be
/// evaluated in parallel; the result does not depend on `exec`.
pub fn sens_minsep_general(
    x: &GramMatrix,
    b: usize,
    k_cap: usize,
    exec: Execution,
) -> Result<SensitivityReport> {
    let schema = ParticipationSchema::MinSep { b, k_cap };
    schema.validate(x.n())?;
    let m = x.values();
    let v = exec.map_range(x.n(), |i| {
        let row: Vec<f64> = m.row(i).iter().map(|a| a.abs()).collect();
        vec_sens(b, &row, k_cap)
    });
    Ok(SensitivityReport {
        value: vec_sens(b, &v, k_cap).sqrt(),
        exact: false,
        schema,
    })
}

/// `(k, b)`-participation sensitivity.
///
/// For a `b`-banded `X` this is `max_{offset} Σ_j diag(X)[offset + j b]`
/// (exact). Otherwise the `b` offset patterns are scanned with absolute
/// values, which is exact whenever those blocks are nonnegative.
pub fn sens_fixed_kb(x: &GramMatrix, k: usize, b: usize) -> Result<SensitivityReport> {
    let schema = ParticipationSchema::FixedKb { k, b };
    let n = x.n();
    schema.validate(n)?;
    let offsets = 0..b.min(n);
    if x.is_banded(b) {
        let diag = x.diag();
        let best = offsets
            .map(|o| (0..k).filter_map(|j| diag.get(o + j * b)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        return Ok(SensitivityReport {
            value: best.sqrt(),
            exact: true,
            schema,
        });
    }
    let mut best = f64::NEG_INFINITY;
    let mut nonneg = true;
    for o in offsets {
        let idx: Vec<usize> = (0..k).map(|j| o + j * b).filter(|&i| i < n).collect();
        let mut s = 0.0;
        for &i in &idx {
            for &j in &idx {
                let v = x.get(i, j);
                nonneg &= v >= 0.0;
                s += v.abs();
            }
        }
        best = best.max(s);
    }
    Ok(SensitivityReport {
        value: best.sqrt(),
        exact: nonneg,
        schema,
    })
}

/// Single participation: the largest column norm of `C`.
pub fn sens_single(x: &GramMatrix) -> SensitivityReport {
    let max = x.diag().into_iter().fold(0.0, f64::max);
    SensitivityReport {
        value: max.sqrt(),
        exact: true,
        schema: ParticipationSchema::Single,
    }
}

/// Participation in every step: `Σ |X|`, exact when `X` is nonnegative.
pub fn sens_every_step(x: &GramMatrix) -> SensitivityReport {
    let vals = x.values().values();
    SensitivityReport {
        value: vals.iter().map(|v| v.abs()).sum::<f64>().sqrt(),
        exact: vals.iter().all(|&v| v >= 0.0),
        schema: ParticipationSchema::EveryStep,
    }
}

/// Dispatches to the tightest available computation for `schema`.
pub fn sensitivity(
    x: &GramMatrix,
    schema: ParticipationSchema,
    exec: Execution,
) -> Result<SensitivityReport> {
    match schema {
        ParticipationSchema::Single => Ok(sens_single(x)),
        ParticipationSchema::EveryStep => Ok(sens_every_step(x)),
        ParticipationSchema::FixedKb { k, b } => sens_fixed_kb(x, k, b),
        ParticipationSchema::MinSep { b, k_cap } => {
            if x.is_banded(b) {
                sens_minsep_banded(x, b, k_cap)
            } else {
                sens_minsep_general(x, b, k_cap, exec)
            }
        }
    }
}

/// `sqrt(max_{π ∈ Π_b, |π| ≤ k_cap} Σ_{i,j ∈ π} |X[i, j]|)` by exhaustive
/// depth-first enumeration. Exponential; limited to `n <= 16`.
pub fn sens_bruteforce(x: &GramMatrix, b: usize, k_cap: usize) -> Result<f64> {
    let n = x.n();
    if n > BRUTEFORCE_MAX_N {
        return Err(Error::TooLarge {
            n,
            limit: BRUTEFORCE_MAX_N,
        });
    }
    if b == 0 {
        return Err(Error::InvalidArgument("separation must be positive".into()));
    }
    let abs: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| x.get(i, j).abs()).collect())
        .collect();
    let mut best = 0.0_f64;
    let mut stack = Vec::with_capacity(k_cap);
    fn dfs(
        abs: &[Vec<f64>],
        start: usize,
        b: usize,
        k_cap: usize,
        total: f64,
        chosen: &mut Vec<usize>,
        best: &mut f64,
    ) {
        *best = best.max(total);
        if chosen.len() == k_cap {
            return;
        }
        for i in start..abs.len() {
            let cross: f64 = chosen.iter().map(|&j| abs[i][j]).sum();
            chosen.push(i);
            dfs(abs, i + b, b, k_cap, total + abs[i][i] + 2.0 * cross, chosen, best);
            chosen.pop();
        }
    }
    dfs(&abs, 0, b, k_cap, 0.0, &mut stack, &mut best);
    Ok(best.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;

    #[test]
    fn vec_sens_examples() {
        assert_eq!(vec_sens(1, &[1.0, 2.0, 3.0], 3), 6.0);
        // patterns with gap >= 2 and size <= 2: {1,3} gives 3 + 2
        assert_eq!(vec_sens(2, &[3.0, 1.0, 2.0], 2), 5.0);
        assert_eq!(vec_sens(3, &[5.0, 4.0], 2), 5.0);
        assert_eq!(vec_sens(1, &[-1.0, -2.0], 2), 0.0);
        assert_eq!(vec_sens(2, &[1.0, 1.0, 1.0], 0), 0.0);
    }

    #[test]
    fn minsep_banded_examples() {
        let r = sens_minsep_banded(&GramMatrix::identity(5), 2, 3).unwrap();
        assert_eq!(r.value, 3f64.sqrt());
        assert!(r.exact);

        let x = GramMatrix::from_diag(&[4.0, 1.0, 9.0, 1.0]);
        let r = sens_minsep_banded(&x, 2, 2).unwrap();
        assert_eq!(r.value, 13f64.sqrt());
    }

    #[test]
    fn minsep_banded_rejects_wide_matrix() {
        let mut m = DenseMatrix::identity(4);
        m[(0, 2)] = 0.3;
        m[(2, 0)] = 0.3;
        let x = GramMatrix::new(m).unwrap();
        assert!(sens_minsep_banded(&x, 2, 2).is_err());
        assert!(sens_minsep_banded(&x, 3, 2).is_ok());
    }

    #[test]
    fn schema_validation() {
        assert!(ParticipationSchema::MinSep { b: 2, k_cap: 4 }.validate(5).is_err());
        assert!(ParticipationSchema::MinSep { b: 2, k_cap: 3 }.validate(5).is_ok());
        assert!(ParticipationSchema::FixedKb { k: 3, b: 3 }.validate(6).is_err());
        assert!(ParticipationSchema::FixedKb { k: 3, b: 3 }.validate(7).is_ok());
        assert_eq!(
            ParticipationSchema::min_sep_default(2052, 342),
            ParticipationSchema::MinSep { b: 342, k_cap: 6 }
        );
    }

    #[test]
    fn general_bound_examples() {
        let ones = GramMatrix::new(DenseMatrix::from_fn(3, 3, |_, _| 1.0)).unwrap();
        let r = sens_minsep_general(&ones, 1, 3, Execution::Sequential).unwrap();
        assert_eq!(r.value, 3.0);
        assert!(!r.exact);
        let r = sens_minsep_general(&GramMatrix::identity(6), 2, 3, Execution::Sequential).unwrap();
        assert_eq!(r.value, 3f64.sqrt());
    }

    #[test]
    fn fixed_kb_examples() {
        let r = sens_fixed_kb(&GramMatrix::identity(2052), 6, 342).unwrap();
        assert_eq!(r.value, 6f64.sqrt());
        assert!(r.exact);

        let x = GramMatrix::identity(2052).scaled(1.0 / 6.0);
        assert!((sens_fixed_kb(&x, 6, 342).unwrap().value - 1.0).abs() < 1e-15);
        assert!((sens_single(&x).value - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(sens_fixed_kb(&x, 7, 342).is_err());
    }

    #[test]
    fn max_participations_examples() {
        assert_eq!(max_participations(2052, 342), 6);
        assert_eq!(max_participations(5, 2), 3);
        assert_eq!(max_participations(17, 17), 1);
    }

    #[test]
    fn bruteforce_small() {
        assert_eq!(sens_bruteforce(&GramMatrix::identity(5), 2, 3).unwrap(), 3f64.sqrt());
        assert!(matches!(
            sens_bruteforce(&GramMatrix::identity(17), 2, 3),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn dispatcher_picks_exact_path_for_banded() {
        let r = sensitivity(
            &GramMatrix::identity(8),
            ParticipationSchema::MinSep { b: 2, k_cap: 4 },
            Execution::Sequential,
        )
        .unwrap();
        assert!(r.exact);
        assert_eq!(r.value, 2.0);
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains(r#""kind":"min_sep""#), "{s}");
    }
}
