//! Lower-triangular query workloads `A` and their Gram matrices `T = AᵀA`.
//!
//! The momentum workload unrolls `m_s = β m_{s-1} + x_s` and
//! `θ_t = θ_0 - Σ_{s ≤ t} η_s m_s`, so the coefficient of the gradient `x_j` in
//! the parameter displacement at step `t` is
//! `A[t, j] = Σ_{s=j}^{t} η_s β^{s-j}`. The learning rate multiplies the
//! momentum buffer at the step it is applied (not the incoming gradient).

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::exec::Execution;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadKind {
    Prefix,
    Sgdm { momentum: f64, lr_schedule: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Workload {
    a: DenseMatrix,
    t: DenseMatrix,
    kind: WorkloadKind,
}

impl Workload {
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    /// `AᵀA`.
    pub fn t(&self) -> &DenseMatrix {
        &self.t
    }

    pub fn kind(&self) -> &WorkloadKind {
        &self.kind
    }

    /// `‖A‖_F² = tr(T)`, the loss of the identity factorization.
    pub fn frobenius_sq(&self) -> f64 {
        self.t.trace()
    }
}

/// Prefix sums: `A` is the lower-triangular all-ones matrix.
pub fn prefix_workload(n: usize) -> Result<Workload> {
    if n == 0 {
        return Err(Error::InvalidArgument("workload size must be positive".into()));
    }
    let a = DenseMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 });
    let t = DenseMatrix::from_fn(n, n, |i, j| (n - i.max(j)) as f64);
    Ok(Workload {
        a,
        t,
        kind: WorkloadKind::Prefix,
    })
}

/// SGD with momentum `β` and per-step learning rates `η`.
pub fn sgdm_workload(momentum: f64, lr_schedule: &[f64], exec: Execution) -> Result<Workload> {
    let n = lr_schedule.len();
    if n == 0 {
        return Err(Error::InvalidArgument("workload size must be positive".into()));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    if let Some((i, &eta)) = lr_schedule
        .iter()
        .enumerate()
        .find(|(_, &eta)| !(eta > 0.0 && eta.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "learning rate at step {i} must be positive, got {eta}"
        )));
    }
    let mut a = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut decay = 1.0;
        let mut acc = 0.0;
        for t in j..n {
            acc += lr_schedule[t] * decay;
            a[(t, j)] = acc;
            decay *= momentum;
        }
    }
    let t = a.gram(exec);
    Ok(Workload {
        a,
        t,
        kind: WorkloadKind::Sgdm {
            momentum,
            lr_schedule: lr_schedule.to_vec(),
        },
    })
}

/// Constant rate 1, then a linear decay over the last `tail_fraction` of
/// steps reaching `floor_fraction` at the final step. An optional linear
/// warmup scales the first `warmup_fraction` of steps by `t / warmup_steps`.
pub fn cooldown_schedule(
    n: usize,
    floor_fraction: f64,
    tail_fraction: f64,
    warmup_fraction: Option<f64>,
) -> Result<Vec<f64>> {
    if !(floor_fraction > 0.0 && floor_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "floor fraction must lie in (0, 1], got {floor_fraction}"
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    let flat = (((1.0 - tail_fraction) * n as f64) + 1e-9).floor() as usize;
    let flat = flat.min(n);
    let mut eta: Vec<f64> = (1..=n)
        .map(|t| {
            if t <= flat {
                1.0
            } else {
                let frac = (t - flat) as f64 / (n - flat) as f64;
                floor_fraction + (1.0 - floor_fraction) * (1.0 - frac)
            }
        })
        .collect();
    if let Some(w) = warmup_fraction {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "warmup fraction must lie in (0, 1), got {w}"
            )));
        }
        let steps = ((w * n as f64).ceil() as usize).max(1);
        for (t, e) in eta.iter_mut().enumerate().take(steps) {
            *e *= (t + 1) as f64 / steps as f64;
        }
    }
    Ok(eta)
}

/// JSON descriptor: `{"kind":"prefix"}` or
/// `{"kind":"sgdm","beta":0.95,"cooldown":{"tail":0.25,"floor":0.05}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    Prefix {},
    Sgdm {
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cooldown: Option<CooldownSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warmup: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CooldownSpec {
    pub tail: f64,
    pub floor: f64,
}

impl WorkloadSpec {
    pub fn build(&self, n: usize, exec: Execution) -> Result<Workload> {
        match self {
            WorkloadSpec::Prefix {} => prefix_workload(n),
            WorkloadSpec::Sgdm {
                beta,
                cooldown,
                warmup,
            } => {
                let mut eta = match cooldown {
                    Some(c) => cooldown_schedule(n, c.floor, c.tail, None)?,
                    None => vec![1.0; n],
                };
                if let Some(w) = warmup {
                    let ramp = cooldown_schedule(n, 1.0, 0.5, Some(*w))?;
                    eta.iter_mut().zip(ramp).for_each(|(e, r)| *e *= r);
                }
                sgdm_workload(*beta, &eta, exec)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_small_cases() {
        let w = prefix_workload(1).unwrap();
        assert_eq!(w.a().values(), &[1.0]);
        assert_eq!(w.t().values(), &[1.0]);

        let w = prefix_workload(3).unwrap();
        assert_eq!(w.t().values(), &[3.0, 2.0, 1.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(prefix_workload(4).unwrap().t().trace(), 10.0);
        assert!(prefix_workload(0).is_err());
    }

    #[test]
    fn prefix_closed_form_matches_dense_product() {
        for n in [1, 2, 7, 64, 256] {
            let w = prefix_workload(n).unwrap();
            let dense = w.a().gram(Execution::default());
            assert!(dense.max_abs_diff(w.t()) < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn sgdm_reduces_to_prefix() {
        let w = sgdm_workload(0.0, &[1.0; 3], Execution::Sequential).unwrap();
        assert_eq!(w.a(), prefix_workload(3).unwrap().a());
        assert_eq!(w.t(), prefix_workload(3).unwrap().t());
    }

    #[test]
    fn sgdm_hand_unrolled() {
        // m1 = x1, m2 = 0.5 x1 + x2; θ2 displacement = m1 + m2 = 1.5 x1 + x2.
        let w = sgdm_workload(0.5, &[1.0, 1.0], Execution::Sequential).unwrap();
        assert_eq!(w.a().values(), &[1.0, 0.0, 1.5, 1.0]);
    }

    #[test]
    fn sgdm_cooldown_row_sums_increase() {
        let eta = cooldown_schedule(8, 0.05, 0.25, None).unwrap();
        let w = sgdm_workload(0.95, &eta, Execution::Sequential).unwrap();
        let sums: Vec<f64> = (0..8).map(|t| w.a().row(t).iter().sum()).collect();
        assert!(sums.windows(2).all(|p| p[1] > p[0]), "{sums:?}");
        assert!(w.a().is_lower_triangular());
        assert!(w.a().diag().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn sgdm_rejects_bad_parameters() {
        assert!(sgdm_workload(1.0, &[1.0], Execution::Sequential).is_err());
        assert!(sgdm_workload(-0.1, &[1.0], Execution::Sequential).is_err());
        assert!(sgdm_workload(0.5, &[1.0, 0.0], Execution::Sequential).is_err());
    }

    #[test]
    fn cooldown_examples() {
        assert_eq!(
            cooldown_schedule(4, 0.05, 0.25, None).unwrap(),
            vec![1.0, 1.0, 1.0, 0.05]
        );
        let eta = cooldown_schedule(8, 0.05, 0.25, None).unwrap();
        assert_eq!(&eta[..6], &[1.0; 6]);
        // linear from 1 at step 6 to 0.05 at step 8
        assert!((eta[6] - (1.0 - 0.95 * 0.5)).abs() < 1e-15);
        assert!((eta[7] - 0.05).abs() < 1e-15);
        assert_eq!(cooldown_schedule(8, 1.0, 0.25, None).unwrap(), vec![1.0; 8]);
        let warm = cooldown_schedule(8, 1.0, 0.25, Some(0.25)).unwrap();
        assert_eq!(&warm[..3], &[0.5, 1.0, 1.0]);
    }

    #[test]
    fn descriptor_json() {
        let p: WorkloadSpec = serde_json::from_str(r#"{"kind":"prefix"}"#).unwrap();
        assert_eq!(p, WorkloadSpec::Prefix {});
        let s: WorkloadSpec = serde_json::from_str(
            r#"{"kind":"sgdm","beta":0.95,"cooldown":{"tail":0.25,"floor":0.05}}"#,
        )
        .unwrap();
        let w = s.build(8, Execution::Sequential).unwrap();
        assert!(matches!(w.kind(), WorkloadKind::Sgdm { momentum, .. } if *momentum == 0.95));
        assert!(serde_json::from_str::<WorkloadSpec>(r#"{"kind":"prefix","x":1}"#).is_err());
    }
}
