//! Banded factorization optimization.
//!
//! Minimizes `tr[AᵀA X⁻¹]` over symmetric positive-definite `X` with `b̂`
//! bands, subject either to `diag(X) = 1` (equal column norms, which makes
//! the banded min-sep sensitivity exactly `√k`) or to equal `(k, b)` offset
//! sums of `diag(X)`. The feasible set is affine, so LBFGS runs on the masked
//! (resp. projected) gradient and every iterate stays feasible. Steps that
//! leave the positive-definite cone are rejected by the line search.

mod lbfgs;
mod objective;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::banded::BandedLowerTriangular;
use crate::dense::DenseMatrix;
use crate::exec::Execution;
use crate::gram::{banded_cholesky, cholesky_in_place, GramMatrix};
use crate::sensitivity::{sensitivity, ParticipationSchema, SensitivityReport};
use crate::workload::Workload;
use crate::{Error, Result};

use lbfgs::{dot, Lbfgs};
use objective::BandedObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    /// `diag(X) = 1`.
    EqualNorm,
    /// Offset sums `Σ_j diag(X)[i + j b]` held fixed for every offset `i`.
    KbProjected { k: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Tolerance on the ∞-norm of the masked / projected gradient.
    pub grad_tol: f64,
    /// Tolerance on the relative loss decrease of an accepted step.
    pub rel_loss_tol: f64,
    pub lbfgs_memory: usize,
    /// Step shrink factor on a rejected trial point.
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    pub mode: Mode,
    pub execution: Execution,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            grad_tol: 1e-8,
            rel_loss_tol: 1e-10,
            lbfgs_memory: 10,
            backtrack: 0.5,
            armijo_c1: 1e-4,
            mode: Mode::EqualNorm,
            execution: Execution::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_tol, self.rel_loss_tol, self.armijo_c1];
        if positive.iter().any(|v| !(*v > 0.0)) || self.lbfgs_memory == 0 {
            return Err(Error::InvalidArgument(
                "optimizer tolerances and memory must be positive".into(),
            ));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument("backtrack factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The feasible set is a single point.
    Trivial,
    GradientTolerance,
    LossTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct FactorizationResult {
    pub x: GramMatrix,
    pub c: BandedLowerTriangular,
    pub loss: f64,
    pub sensitivity: SensitivityReport,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Loss after each accepted step, starting with the initial point.
    pub loss_history: Vec<f64>,
    /// ∞-norm of the masked / projected gradient at the returned point.
    pub grad_norm: f64,
    pub wall_ms: u128,
}

/// `tr[T X⁻¹]` via Cholesky solves.
pub fn loss(t: &DenseMatrix, x: &GramMatrix) -> Result<f64> {
    let z = x.solve(t)?;
    Ok(z.trace())
}

/// Gradient of [`loss`] with respect to `X`: `−X⁻¹ T X⁻¹`, symmetrized.
pub fn loss_grad(t: &DenseMatrix, x: &GramMatrix) -> Result<DenseMatrix> {
    // X⁻¹ T X⁻¹ = X⁻¹ (X⁻¹ T)ᵀ for symmetric T
    let z = x.solve(t)?;
    let mut g = x.solve(&z.transpose())?;
    g.scale(-1.0);
    g.symmetrize();
    Ok(g)
}

/// Loss and in-band gradient exactly as the optimizer evaluates them: banded
/// Cholesky of `X`, blocked triangular solves, and only the entries of
/// `−X⁻¹AᵀAX⁻¹` with `|i − j| < bands` (zero elsewhere, symmetric).
pub fn banded_loss_and_grad(
    workload: &Workload,
    x: &GramMatrix,
    exec: Execution,
) -> Result<(f64, DenseMatrix)> {
    let n = workload.n();
    if x.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.n(),
        });
    }
    let bands = x.effective_bands();
    let chol = x.cholesky()?;
    let (loss, band) = BandedObjective::new(workload.a(), bands, exec).loss_and_grad(&chol);
    let band = BandedLowerTriangular::new(n, bands, band)?;
    Ok((loss, GramMatrix::from_lower_band(&band).into_values()))
}

/// Zeroes the diagonal and everything outside `bands` bands.
pub fn mask_gradient_equal_norm(g: &DenseMatrix, bands: usize) -> DenseMatrix {
    DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| {
        let d = i.abs_diff(j);
        if d == 0 || d >= bands {
            0.0
        } else {
            g[(i, j)]
        }
    })
}

/// Band-masks `G` (keeping the diagonal), then removes the mean of each
/// `(k, b)` diagonal offset class so that `Σ_j diag[i + j b]` is invariant
/// along the returned direction.
///
/// Classes with fewer than `k` members inside `[0, n)` are centred over the
/// members that exist.
pub fn project_gradient_kb(g: &DenseMatrix, k: usize, b: usize, bands: usize) -> Result<DenseMatrix> {
    let n = g.rows();
    ParticipationSchema::FixedKb { k, b }.validate(n)?;
    let mut out = DenseMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) >= bands {
            0.0
        } else {
            g[(i, j)]
        }
    });
    let mut diag = out.diag();
    project_diag_classes(&mut diag, k, b);
    for (i, d) in diag.into_iter().enumerate() {
        out[(i, i)] = d;
    }
    Ok(out)
}

fn project_diag_classes(diag: &mut [f64], k: usize, b: usize) {
    let n = diag.len();
    for offset in 0..b.min(n) {
        let members: Vec<usize> = (0..k).map(|j| offset + j * b).filter(|&i| i < n).collect();
        let mean = members.iter().map(|&i| diag[i]).sum::<f64>() / members.len() as f64;
        for &i in &members {
            diag[i] -= mean;
        }
    }
}

/// `σ · sens · ‖A C⁻¹‖_F / √n`: the root-mean-squared error of the released
/// workload answers with the optimal decoder `B = A C⁻¹`.
pub fn rmse(
    workload: &Workload,
    c: &BandedLowerTriangular,
    sensitivity: f64,
    sigma: f64,
    exec: Execution,
) -> Result<f64> {
    if !(sensitivity > 0.0 && sigma >= 0.0) {
        return Err(Error::InvalidArgument(
            "sensitivity must be positive and sigma nonnegative".into(),
        ));
    }
    let fro = decoder_frobenius_sq(workload, c, exec)?;
    Ok(sigma * sensitivity * (fro / workload.n() as f64).sqrt())
}

/// `‖A C⁻¹‖_F²`, one transpose solve per row of `A`.
pub fn decoder_frobenius_sq(
    workload: &Workload,
    c: &BandedLowerTriangular,
    exec: Execution,
) -> Result<f64> {
    let n = workload.n();
    if c.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: c.n(),
        });
    }
    if let Some(index) = c.first_zero_diagonal() {
        return Err(Error::ZeroDiagonal { index });
    }
    let a = workload.a();
    let rows: Vec<usize> = (0..n).collect();
    let parts = exec.map_slice(&rows.chunks(64).collect::<Vec<_>>(), |chunk| {
        let w = chunk.len();
        // columns of the block are rows of A, so solving Cᵀ Y = block gives (A C⁻¹)ᵀ
        let mut block = vec![0.0; n * w];
        for (c_idx, &r) in chunk.iter().enumerate() {
            for (i, &v) in a.row(r).iter().enumerate() {
                block[i * w + c_idx] = v;
            }
        }
        let mut acc = vec![0.0; w];
        c.solve_transpose_rows_unchecked(&mut block, w, &mut acc);
        block.iter().map(|v| v * v).sum::<f64>()
    });
    Ok(parts.into_iter().sum())
}

/// Optimizes a `bands`-banded factorization of `workload`.
///
/// Starts from `X = I`. Non-convergence is reported through
/// [`FactorizationResult::converged`], not as an error.
pub fn optimize_banded(
    workload: &Workload,
    bands: usize,
    cfg: &OptimizerConfig,
    schema: ParticipationSchema,
) -> Result<FactorizationResult> {
    let n = workload.n();
    cfg.validate()?;
    if bands == 0 || bands > n {
        return Err(Error::InvalidArgument(format!(
            "bands must lie in [1, {n}], got {bands}"
        )));
    }
    schema.validate(n)?;
    if let Mode::KbProjected { k, b } = cfg.mode {
        ParticipationSchema::FixedKb { k, b }.validate(n)?;
        if n > k * b {
            return Err(Error::InfeasibleSchema(format!(
                "(k, b) = ({k}, {b}) leaves steps beyond k * b = {} uncovered",
                k * b
            )));
        }
    }
    let start = Instant::now();
    let exec = cfg.execution;
    let objective = BandedObjective::new(workload.a(), bands, exec);

    // Free coordinates of the compact lower band.
    let probe = BandedLowerTriangular::zeros(n, bands)?;
    let mut free = vec![false; n * bands];
    for i in 0..n {
        for j in probe.row_start(i)..=i {
            let slot = i * bands + bands - 1 - (i - j);
            free[slot] = i != j || matches!(cfg.mode, Mode::KbProjected { .. });
        }
    }
    let diag_slots: Vec<usize> = (0..n).map(|i| i * bands + bands - 1).collect();

    let mut params = vec![0.0; n * bands];
    for &s in &diag_slots {
        params[s] = 1.0;
    }

    let to_param_grad = |band_grad: &[f64]| -> (Vec<f64>, f64) {
        let mut g = vec![0.0; n * bands];
        for (slot, &v) in band_grad.iter().enumerate() {
            if free[slot] {
                let is_diag = slot % bands == bands - 1;
                g[slot] = if is_diag { v } else { 2.0 * v };
            }
        }
        if let Mode::KbProjected { k, b } = cfg.mode {
            let mut d: Vec<f64> = diag_slots.iter().map(|&s| g[s]).collect();
            project_diag_classes(&mut d, k, b);
            for (&s, v) in diag_slots.iter().zip(d) {
                g[s] = v;
            }
        }
        // ∞-norm in matrix coordinates (off-diagonal entries appear twice in g)
        let norm = g.iter().enumerate().fold(0.0_f64, |m, (slot, v)| {
            let scale = if slot % bands == bands - 1 { 1.0 } else { 0.5 };
            m.max((v * scale).abs())
        });
        (g, norm)
    };
    let factor = |p: &[f64]| -> Option<BandedLowerTriangular> {
        let mut l = BandedLowerTriangular::new(n, bands, p.to_vec()).ok()?;
        cholesky_in_place(&mut l).ok()?;
        Some(l)
    };

    let trivial = bands == 1 && cfg.mode == Mode::EqualNorm;
    let chol = factor(&params).expect("identity is positive definite");
    let (mut f, band_grad) = objective.loss_and_grad(&chol);
    let (mut g, mut gnorm) = if trivial {
        (vec![0.0; n * bands], 0.0)
    } else {
        to_param_grad(&band_grad)
    };
    let mut history = vec![f];
    let mut memory = Lbfgs::new(cfg.lbfgs_memory);
    let mut iterations = 0;
    let mut termination = if trivial {
        Termination::Trivial
    } else {
        Termination::MaxIterations
    };

    while !trivial && iterations < cfg.max_iters {
        if gnorm <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut d = memory.direction(&g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.reset();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        if let Mode::KbProjected { k, b } = cfg.mode {
            let mut dd: Vec<f64> = diag_slots.iter().map(|&s| d[s]).collect();
            project_diag_classes(&mut dd, k, b);
            for (&s, v) in diag_slots.iter().zip(dd) {
                d[s] = v;
            }
            slope = dot(&g, &d);
        }
        let mut t = if memory.is_empty() {
            let dmax = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            (0.1 / dmax).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = params.iter().zip(&d).map(|(p, di)| p + t * di).collect();
            if let Some(l) = factor(&trial) {
                let ft = objective.loss(&l);
                if ft.is_finite() && ft <= f + cfg.armijo_c1 * t * slope {
                    accepted = Some((trial, l, ft));
                    break;
                }
            }
            t *= cfg.backtrack;
        }
        let Some((trial, l, f_new)) = accepted else {
            if memory.is_empty() {
                termination = Termination::LineSearchFailed;
                break;
            }
            memory.reset();
            continue;
        };
        let (f_eval, band_grad) = objective.loss_and_grad(&l);
        debug_assert!((f_eval - f_new).abs() <= 1e-9 * f_new.abs().max(1.0));
        let (g_new, norm_new) = to_param_grad(&band_grad);
        let s: Vec<f64> = trial.iter().zip(&params).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        memory.update(s, y);

        let rel = (f - f_eval) / f.abs().max(f64::MIN_POSITIVE);
        params = trial;
        f = f_eval;
        g = g_new;
        gnorm = norm_new;
        history.push(f);
        iterations += 1;
        if gnorm <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        if rel <= cfg.rel_loss_tol {
            termination = Termination::LossTolerance;
            break;
        }
    }

    let band = BandedLowerTriangular::new(n, bands, params)?;
    let x = GramMatrix::from_lower_band(&band);
    let c = banded_cholesky(&x)?;
    let sensitivity = sensitivity(&x, schema, exec)?;
    Ok(FactorizationResult {
        x,
        c,
        loss: f,
        sensitivity,
        iterations,
        converged: matches!(
            termination,
            Termination::Trivial | Termination::GradientTolerance | Termination::LossTolerance
        ),
        termination,
        loss_history: history,
        grad_norm: gnorm,
        wall_ms: start.elapsed().as_millis(),
    })
}
