//! Privacy accounting for banded mechanisms.
//!
//! A `b̂`-banded mechanism whose records are split into `b̂` disjoint
//! partitions, each sampled only on its own residue class of steps, releases
//! the same information as `⌈n / b̂⌉` adaptive Gaussian queries with
//! sensitivity `max_i ‖C e_i‖₂`, each on a Poisson sample of one partition
//! (of size `⌊m / b̂⌋`). This module accounts for such event trees with Rényi
//! DP (subsampled Gaussian bound), zCDP for unsampled compositions, and the
//! exact Gaussian tradeoff for unsampled Gaussian compositions.
//!
//! RDP conversion is valid but looser than privacy-loss-distribution
//! accounting, so calibrated noise multipliers are slightly conservative.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::banded::BandedLowerTriangular;
use crate::exec::Execution;
use crate::optimizer::decoder_frobenius_sq;
use crate::sensitivity::{max_participations, sensitivity, ParticipationSchema};
use crate::workload::Workload;
use crate::{Error, GramMatrix, Result};

/// Lower end of the noise-multiplier search bracket.
pub const SIGMA_MIN: f64 = 1e-3;
/// Upper end of the noise-multiplier search bracket.
pub const SIGMA_MAX: f64 = 1e3;
/// Relative tolerance of [`calibrate_sigma`].
pub const CALIBRATION_RTOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccountingEvent {
    /// Gaussian mechanism with noise standard deviation
    /// `noise_multiplier × sensitivity`.
    Gaussian { noise_multiplier: f64 },
    /// `child` run on a Poisson sample with inclusion probability `q`.
    PoissonSampled { q: f64, child: Box<AccountingEvent> },
    /// `count` adaptive repetitions of `child`.
    Composed { child: Box<AccountingEvent>, count: u64 },
    /// `queries` Gaussian queries over batches of `batch` records taken
    /// cyclically from a shuffled dataset of `dataset_size` records. Only the
    /// reduction is represented; the accountant refuses to convert it.
    Shuffled {
        noise_multiplier: f64,
        dataset_size: u64,
        batch: u64,
        queries: u64,
    },
}

impl AccountingEvent {
    pub fn gaussian(noise_multiplier: f64) -> Self {
        AccountingEvent::Gaussian { noise_multiplier }
    }

    pub fn poisson(q: f64, child: AccountingEvent) -> Self {
        AccountingEvent::PoissonSampled {
            q,
            child: Box::new(child),
        }
    }

    pub fn composed(child: AccountingEvent, count: u64) -> Self {
        AccountingEvent::Composed {
            child: Box::new(child),
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AccountingEvent::Gaussian { noise_multiplier } => {
                if !(*noise_multiplier > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "noise multiplier must be positive, got {noise_multiplier}"
                    )));
                }
                Ok(())
            }
            AccountingEvent::PoissonSampled { q, child } => {
                if !(0.0..=1.0).contains(q) {
                    return Err(Error::InvalidArgument(format!(
                        "sampling probability must lie in [0, 1], got {q}"
                    )));
                }
                child.validate()
            }
            AccountingEvent::Composed { child, count } => {
                if *count == 0 {
                    return Err(Error::InvalidArgument("composition count must be >= 1".into()));
                }
                child.validate()
            }
            AccountingEvent::Shuffled {
                noise_multiplier,
                dataset_size,
                batch,
                queries,
            } => {
                if !(*noise_multiplier > 0.0) || *batch == 0 || *queries == 0 {
                    return Err(Error::InvalidArgument(
                        "shuffled event needs positive noise, batch and query count".into(),
                    ));
                }
                if batch > dataset_size {
                    return Err(Error::InvalidArgument(
                        "batch exceeds shuffled dataset size".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// `Some((noise_multiplier, count))` when the tree is an unsampled
    /// composition of one Gaussian (sampling at `q = 1` counts as unsampled).
    fn as_gaussian_composition(&self) -> Option<(f64, u64)> {
        match self {
            AccountingEvent::Gaussian { noise_multiplier } => Some((*noise_multiplier, 1)),
            AccountingEvent::PoissonSampled { q, child } if *q == 1.0 => {
                child.as_gaussian_composition()
            }
            AccountingEvent::Composed { child, count } => child
                .as_gaussian_composition()
                .map(|(s, c)| (s, c.saturating_mul(*count))),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrivacyBudget {
    Approx { epsilon: f64, delta: f64 },
    Zcdp { rho: f64 },
}

impl PrivacyBudget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PrivacyBudget::Approx { epsilon, delta } => {
                if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "need epsilon > 0 and delta in (0, 1), got ({epsilon}, {delta})"
                    )));
                }
            }
            PrivacyBudget::Zcdp { rho } => {
                if !(rho > 0.0) {
                    return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Poisson,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmplifiedSetup {
    /// Steps.
    pub n: usize,
    /// Records.
    pub m: usize,
    /// Expected records per step.
    pub batch: usize,
    /// Number of partitions (= bands = min separation).
    pub bands: usize,
    pub sampling: Sampling,
}

impl AmplifiedSetup {
    pub fn validate(&self) -> Result<()> {
        let AmplifiedSetup {
            n, m, batch, bands, ..
        } = *self;
        if n == 0 || m == 0 || batch == 0 || bands == 0 {
            return Err(Error::InvalidArgument(
                "n, m, batch and bands must be positive".into(),
            ));
        }
        if bands > n {
            return Err(Error::InvalidArgument(format!("bands = {bands} exceeds n = {n}")));
        }
        if batch > m / bands {
            return Err(Error::InvalidArgument(format!(
                "batch = {batch} exceeds partition size floor(m / b) = {}",
                m / bands
            )));
        }
        Ok(())
    }

    /// Poisson inclusion probability within one partition.
    pub fn sampling_probability(&self) -> f64 {
        self.batch as f64 / (self.m / self.bands) as f64
    }

    /// Number of Gaussian queries each partition is involved in.
    pub fn queries(&self) -> usize {
        self.n.div_ceil(self.bands)
    }
}

/// Largest column norm of `C`, the per-query sensitivity after the
/// partition reduction.
pub fn sensitivity_for_amplification(c: &BandedLowerTriangular) -> f64 {
    c.column_norms_sq().into_iter().fold(0.0, f64::max).sqrt()
}

/// Same as [`sensitivity_for_amplification`] from the Gram matrix.
pub fn sensitivity_for_amplification_gram(x: &GramMatrix) -> f64 {
    x.diag().into_iter().fold(0.0, f64::max).sqrt()
}

/// `Composed(PoissonSampled(q = B / ⌊m / b⌋, Gaussian(σ)), ⌈n / b⌉)`, or the
/// unsampled composition when sampling is disabled.
pub fn build_amplified_event(setup: &AmplifiedSetup, noise_multiplier: f64) -> Result<AccountingEvent> {
    setup.validate()?;
    let q = setup.sampling_probability();
    if q > 1.0 {
        return Err(Error::InvalidArgument(format!("sampling probability {q} exceeds 1")));
    }
    let gaussian = AccountingEvent::gaussian(noise_multiplier);
    let query = match setup.sampling {
        Sampling::Poisson => AccountingEvent::poisson(q, gaussian),
        Sampling::None => gaussian,
    };
    let event = AccountingEvent::composed(query, setup.queries() as u64);
    event.validate()?;
    Ok(event)
}

/// zCDP of an unsampled Gaussian composition whose queries have sensitivity
/// `sensitivity`: `ρ = count · Δ² / (2σ²)`.
pub fn zcdp_of(event: &AccountingEvent, sensitivity: f64) -> Result<f64> {
    event.validate()?;
    match event {
        AccountingEvent::Gaussian { noise_multiplier } => {
            Ok(sensitivity * sensitivity / (2.0 * noise_multiplier * noise_multiplier))
        }
        AccountingEvent::Composed { child, count } => Ok(*count as f64 * zcdp_of(child, sensitivity)?),
        AccountingEvent::PoissonSampled { .. } => Err(Error::UnsupportedEvent(
            "zCDP is only defined here for unsampled Gaussian compositions".into(),
        )),
        AccountingEvent::Shuffled { .. } => Err(shuffle_refusal(event)),
    }
}

fn shuffle_refusal(event: &AccountingEvent) -> Error {
    if let AccountingEvent::Shuffled {
        noise_multiplier,
        dataset_size,
        batch,
        queries,
    } = event
    {
        Error::UnsupportedEvent(format!(
            "shuffling is not converted numerically. The mechanism satisfies any guarantee of \
             {queries} adaptive Gaussian queries (noise multiplier {noise_multiplier}, sensitivity \
             max_i ||C e_i||) on batches of {batch} taken cyclically from a shuffled dataset of \
             {dataset_size} records; account for that with a shuffle analysis of your choice"
        ))
    } else {
        Error::UnsupportedEvent("not a shuffled event".into())
    }
}

/// Default RDP orders: 1.25, 1.5, every integer in `2..=256`, then a
/// geometric tail up to 8192 so that very small ε targets remain reachable.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5];
    orders.extend((2..=256).map(f64::from));
    let mut a = 256.0_f64;
    while a < 8192.0 {
        a = (a * 1.25).round();
        orders.push(a.min(8192.0));
    }
    orders
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln erfc(x)`, with an asymptotic expansion where `erfc` underflows.
pub(crate) fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        return erfc(x).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
    -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
}

/// `ln Φ(x)` for the standard normal CDF.
fn log_norm_cdf(x: f64) -> f64 {
    (0.5_f64).ln() + log_erfc(-x / std::f64::consts::SQRT_2)
}

/// RDP at order `alpha` of the Poisson-subsampled Gaussian mechanism with
/// sampling probability `q` and noise multiplier `sigma`.
///
/// Integer orders use the binomial expansion
/// `A_α = Σ_i C(α, i) q^i (1 − q)^{α−i} exp((i² − i) / (2σ²))` in log space;
/// fractional orders use the two-sided series with `erfc` tails.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> f64 {
    assert!(alpha > 1.0, "RDP order must exceed 1");
    if q == 0.0 {
        return 0.0;
    }
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u64)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    log_a / (alpha - 1.0)
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let two_s2 = 2.0 * sigma * sigma;
    let a = alpha as f64;
    let mut log_coef = 0.0_f64;
    let mut acc = f64::NEG_INFINITY;
    for i in 0..=alpha {
        let fi = i as f64;
        if i > 0 {
            log_coef += (a - fi + 1.0).ln() - fi.ln();
        }
        let term = log_coef + fi * lq + (a - fi) * l1q + (fi * fi - fi) / two_s2;
        acc = log_add(acc, term);
    }
    acc
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let s2 = sigma * sigma;
    let z0 = s2 * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2s = std::f64::consts::SQRT_2 * sigma;
    let ln_half = (0.5_f64).ln();
    let (mut a0, mut a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut coef = 1.0_f64;
    let mut i = 0.0_f64;
    loop {
        if i > 0.0 {
            coef *= (alpha - i + 1.0) / i;
        }
        if coef == 0.0 {
            break;
        }
        let log_coef = coef.abs().ln();
        let j = alpha - i;
        let log_t0 = log_coef + i * lq + j * l1q;
        let log_t1 = log_coef + j * lq + i * l1q;
        let log_e0 = ln_half + log_erfc((i - z0) / sqrt2s);
        let log_e1 = ln_half + log_erfc((z0 - j) / sqrt2s);
        let log_s0 = log_t0 + (i * i - i) / (2.0 * s2) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * s2) + log_e1;
        if coef > 0.0 {
            a0 = log_add(a0, log_s0);
            a1 = log_add(a1, log_s1);
        } else {
            a0 = log_sub(a0, log_s0);
            a1 = log_sub(a1, log_s1);
        }
        i += 1.0;
        if log_s0.max(log_s1) < -30.0 || i > 10_000.0 {
            break;
        }
    }
    log_add(a0, a1)
}

/// Per-order RDP of an event tree.
pub fn rdp_curve(event: &AccountingEvent, orders: &[f64]) -> Result<Vec<f64>> {
    event.validate()?;
    if let Some(&a) = orders.iter().find(|&&a| !(a > 1.0)) {
        return Err(Error::InvalidArgument(format!("RDP orders must exceed 1, got {a}")));
    }
    orders.iter().map(|&a| rdp_at(event, a)).collect()
}

fn rdp_at(event: &AccountingEvent, alpha: f64) -> Result<f64> {
    match event {
        AccountingEvent::Gaussian { noise_multiplier } => {
            Ok(alpha / (2.0 * noise_multiplier * noise_multiplier))
        }
        AccountingEvent::PoissonSampled { q, child } => match child.as_ref() {
            AccountingEvent::Gaussian { noise_multiplier } => {
                Ok(rdp_subsampled_gaussian(*q, *noise_multiplier, alpha))
            }
            _ => Err(Error::UnsupportedEvent(
                "Poisson sampling is only supported directly over a Gaussian".into(),
            )),
        },
        AccountingEvent::Composed { child, count } => Ok(*count as f64 * rdp_at(child, alpha)?),
        AccountingEvent::Shuffled { .. } => Err(shuffle_refusal(event)),
    }
}

/// `ε(δ)` from an RDP curve: the minimum over orders of
/// `ρ_α − (ln δ + ln α) / (α − 1) + ln((α − 1) / α)`, floored at 0.
pub fn eps_from_rdp(orders: &[f64], rdp: &[f64], delta: f64) -> f64 {
    let ld = delta.ln();
    orders
        .iter()
        .zip(rdp)
        .map(|(&a, &r)| r - (ld + a.ln()) / (a - 1.0) + ((a - 1.0) / a).ln())
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// `δ(ε)` of the Gaussian mechanism with `μ = Δ / σ`:
/// `Φ(−ε/μ + μ/2) − e^ε Φ(−ε/μ − μ/2)`.
pub fn gaussian_delta(mu: f64, epsilon: f64) -> f64 {
    let a = log_norm_cdf(-epsilon / mu + mu / 2.0);
    let b = epsilon + log_norm_cdf(-epsilon / mu - mu / 2.0);
    log_sub(a, b).exp()
}

/// Smallest `ε >= 0` with `gaussian_delta(μ, ε) <= δ`.
pub fn gaussian_epsilon(mu: f64, delta: f64) -> f64 {
    if gaussian_delta(mu, 0.0) <= delta {
        return 0.0;
    }
    let mut hi = 1.0;
    while gaussian_delta(mu, hi) > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_delta(mu, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

/// `ε` at `δ` for an event tree: RDP conversion over `orders`, and for
/// unsampled Gaussian compositions also the exact Gaussian tradeoff, taking
/// the smaller value.
pub fn eps_of(event: &AccountingEvent, delta: f64, orders: &[f64]) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let rdp = rdp_curve(event, orders)?;
    let mut eps = eps_from_rdp(orders, &rdp, delta);
    if let Some((sigma, count)) = event.as_gaussian_composition() {
        let mu = (count as f64).sqrt() / sigma;
        eps = eps.min(gaussian_epsilon(mu, delta));
    }
    Ok(eps)
}

/// Privacy spent by `event`, in the currency of `budget`.
fn spent(event: &AccountingEvent, budget: &PrivacyBudget, orders: &[f64]) -> Result<f64> {
    match *budget {
        PrivacyBudget::Approx { delta, .. } => eps_of(event, delta, orders),
        PrivacyBudget::Zcdp { .. } => zcdp_of(event, 1.0),
    }
}

fn target(budget: &PrivacyBudget) -> f64 {
    match *budget {
        PrivacyBudget::Approx { epsilon, .. } => epsilon,
        PrivacyBudget::Zcdp { rho } => rho,
    }
}

/// Smallest noise multiplier in `[SIGMA_MIN, SIGMA_MAX]` (to relative
/// tolerance [`CALIBRATION_RTOL`]) whose event meets `budget`.
///
/// `make_event` maps a noise multiplier to the event to account for. The
/// spent budget must be nonincreasing in the noise multiplier; a violation
/// observed during the search is an error.
pub fn calibrate_sigma<F>(make_event: F, budget: &PrivacyBudget, orders: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> Result<AccountingEvent>,
{
    budget.validate()?;
    let goal = target(budget);
    let eval = |s: f64| -> Result<f64> { spent(&make_event(s)?, budget, orders) };
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let (e_lo, mut e_hi) = (eval(lo)?, eval(hi)?);
    if e_hi > goal {
        return Err(Error::Bracket(format!(
            "target {goal} not reachable with noise multiplier <= {SIGMA_MAX} (spent {e_hi})"
        )));
    }
    if e_lo <= goal {
        return Ok(lo);
    }
    let mut e_lo = e_lo;
    loop {
        let close_sigma = hi / lo <= 1.0 + CALIBRATION_RTOL;
        let close_eps = e_hi >= goal * (1.0 - CALIBRATION_RTOL);
        if (close_sigma && close_eps) || hi / lo <= 1.0 + 1e-12 {
            return Ok(hi);
        }
        let mid = (lo * hi).sqrt();
        let e_mid = eval(mid)?;
        if e_mid > e_lo * (1.0 + 1e-9) || e_mid < e_hi * (1.0 - 1e-9) {
            return Err(Error::Bracket(format!(
                "privacy loss is not monotone in the noise multiplier near {mid}"
            )));
        }
        if e_mid > goal {
            lo = mid;
            e_lo = e_mid;
        } else {
            hi = mid;
            e_hi = e_mid;
        }
    }
}

/// Noise multiplier for the amplified event of `setup`.
pub fn calibrate_amplified(setup: &AmplifiedSetup, budget: &PrivacyBudget, orders: &[f64]) -> Result<f64> {
    setup.validate()?;
    calibrate_sigma(|s| build_amplified_event(setup, s), budget, orders)
}

/// Noise multiplier (relative to the schema sensitivity) for a single
/// unamplified release.
pub fn calibrate_unamplified(budget: &PrivacyBudget, orders: &[f64]) -> Result<f64> {
    calibrate_sigma(|s| Ok(AccountingEvent::gaussian(s)), budget, orders)
}

/// Sampling setup shared by every row of a band sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSetup {
    pub n: usize,
    pub m: usize,
    pub batch: usize,
}

impl SweepSetup {
    /// Largest band count that still gets amplification: `⌊m / B⌋`.
    pub fn max_amplified_bands(&self) -> usize {
        self.m / self.batch
    }
}

/// A factorization as consumed by the sweep.
#[derive(Debug, Clone)]
pub struct SweepFactor {
    pub x: GramMatrix,
    pub c: BandedLowerTriangular,
    /// `tr[AᵀA X⁻¹]`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bands: usize,
    pub amplified: bool,
    /// Noise multiplier relative to `sensitivity`.
    pub noise_multiplier: Option<f64>,
    pub sensitivity: Option<f64>,
    pub loss: Option<f64>,
    /// `σ² · loss` with noise standard deviation `σ = noise_multiplier × sensitivity`.
    pub total_error: Option<f64>,
    /// `sqrt(total_error / n)`.
    pub rmse: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best: Option<usize>,
}

/// Evaluates each band count in `grid` and picks the one with the smallest
/// total squared error.
///
/// Band counts up to `⌊m / B⌋` use the amplified analysis; larger ones are
/// accounted as a single unamplified Gaussian release whose sensitivity is
/// the `⌊m / B⌋`-min-sep sensitivity of the factorization. Failures are
/// recorded on their row and never abort the sweep. Ties go to the smaller
/// band count.
pub fn sweep_bands<F>(
    workload: &Workload,
    setup: &SweepSetup,
    budget: &PrivacyBudget,
    grid: &[usize],
    orders: &[f64],
    exec: Execution,
    factorize: F,
) -> Result<SweepTable>
where
    F: Fn(usize) -> Result<SweepFactor> + Sync + Send,
{
    let n = workload.n();
    if setup.n != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: setup.n,
        });
    }
    if setup.batch == 0 || setup.batch > setup.m {
        return Err(Error::InvalidArgument("batch must lie in [1, m]".into()));
    }
    budget.validate()?;
    if let Some(&b) = grid.iter().find(|&&b| b == 0 || b > n) {
        return Err(Error::InvalidArgument(format!("band count {b} outside [1, {n}]")));
    }
    let rows = exec.map_slice(grid, |&bands| {
        let mut row = SweepRow {
            bands,
            amplified: bands <= setup.max_amplified_bands(),
            noise_multiplier: None,
            sensitivity: None,
            loss: None,
            total_error: None,
            rmse: None,
            note: None,
        };
        if let Err(e) = evaluate_row(&mut row, setup, budget, orders, exec, &factorize) {
            row.note = Some(e.to_string());
        }
        row
    });
    let mut best: Option<(usize, f64)> = None;
    for row in &rows {
        if let Some(err) = row.total_error {
            let better = match best {
                None => true,
                Some((b, e)) => err < e * (1.0 - 1e-12) || (err <= e * (1.0 + 1e-12) && row.bands < b),
            };
            if better {
                best = Some((row.bands, err));
            }
        }
    }
    Ok(SweepTable {
        rows,
        best: best.map(|(b, _)| b),
    })
}

fn evaluate_row<F>(
    row: &mut SweepRow,
    setup: &SweepSetup,
    budget: &PrivacyBudget,
    orders: &[f64],
    exec: Execution,
    factorize: &F,
) -> Result<()>
where
    F: Fn(usize) -> Result<SweepFactor>,
{
    let factor = factorize(row.bands)?;
    row.loss = Some(factor.loss);
    let (nm, sens) = if row.amplified {
        let amp = AmplifiedSetup {
            n: setup.n,
            m: setup.m,
            batch: setup.batch,
            bands: row.bands,
            sampling: Sampling::Poisson,
        };
        (
            calibrate_amplified(&amp, budget, orders)?,
            sensitivity_for_amplification(&factor.c),
        )
    } else {
        let b = setup.max_amplified_bands().max(1);
        let schema = ParticipationSchema::MinSep {
            b,
            k_cap: max_participations(setup.n, b),
        };
        (
            calibrate_unamplified(budget, orders)?,
            sensitivity(&factor.x, schema, exec)?.value,
        )
    };
    let sigma = nm * sens;
    let total = sigma * sigma * factor.loss;
    row.noise_multiplier = Some(nm);
    row.sensitivity = Some(sens);
    row.total_error = Some(total);
    row.rmse = Some((total / setup.n as f64).sqrt());
    Ok(())
}

/// `‖A C⁻¹‖_F²` recomputed from a stored encoder, for cross-checking sweep
/// rows.
pub fn loss_from_encoder(workload: &Workload, c: &BandedLowerTriangular, exec: Execution) -> Result<f64> {
    decoder_frobenius_sq(workload, c, exec)
}
