//! Drivers for the mechanism-comparison table (prefix sums, `n = 2052`,
//! `(6, 342)` participation) and the optimal-band-count table (prefix sums,
//! `n = 1024`, `δ = 1e-6`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::accounting::{default_orders, sweep_bands, PrivacyBudget, SweepFactor, SweepRow, SweepSetup};
use crate::cache::FactorizationCache;
use crate::exec::Execution;
use crate::optimizer::{FactorizationResult, Mode, OptimizerConfig};
use crate::sensitivity::{max_participations, sens_single, sensitivity, ParticipationSchema};
use crate::workload::{prefix_workload, WorkloadSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Config {
    pub n: usize,
    /// Participation separation.
    pub b: usize,
    /// Participations.
    pub k: usize,
    /// Band counts of the banded rows.
    pub bands: Vec<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for Table3Config {
    fn default() -> Self {
        Self {
            n: 2052,
            b: 342,
            k: 6,
            bands: vec![128, 342],
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// One mechanism, with its encoder scaled to unit `(k, b)` sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub mechanism: String,
    pub bands: usize,
    pub equal_norms: bool,
    pub sens_single: f64,
    pub sens_kb: f64,
    pub sens_minsep: f64,
    pub sens_minsep_exact: bool,
    /// RMSE with unit noise multiplier under `(k, b)` participation.
    pub rmse_kb: f64,
    /// RMSE with unit noise multiplier under `b`-min-sep participation.
    pub rmse_minsep: f64,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn table3_row(
    mechanism: &str,
    cfg: &Table3Config,
    r: &FactorizationResult,
    equal_norms: bool,
) -> Result<Table3Row> {
    let exec = cfg.optimizer.execution;
    let kb = sensitivity(&r.x, ParticipationSchema::FixedKb { k: cfg.k, b: cfg.b }, exec)?;
    let minsep = sensitivity(
        &r.x,
        ParticipationSchema::MinSep {
            b: cfg.b,
            k_cap: max_participations(cfg.n, cfg.b),
        },
        exec,
    )?;
    let single = sens_single(&r.x).value;
    let root = (r.loss / cfg.n as f64).sqrt();
    Ok(Table3Row {
        mechanism: mechanism.into(),
        bands: r.c.bands(),
        equal_norms,
        sens_single: single / kb.value,
        sens_kb: 1.0,
        sens_minsep: minsep.value / kb.value,
        sens_minsep_exact: minsep.exact,
        rmse_kb: kb.value * root,
        rmse_minsep: minsep.value * root,
        loss: r.loss,
        iterations: r.iterations,
        converged: r.converged,
    })
}

/// DP-SGD (`b̂ = 1`) and, for each band count, the `(k, b)`-projected and
/// equal-column-norm banded factorizations. Projected rows are omitted when
/// `n > k · b`.
pub fn table3(cfg: &Table3Config, cache: &FactorizationCache) -> Result<Vec<Table3Row>> {
    let spec = WorkloadSpec::Prefix {};
    let (n, k, b) = (cfg.n, cfg.k, cfg.b);
    let schema = ParticipationSchema::FixedKb { k, b };
    schema.validate(n)?;
    let en = OptimizerConfig {
        mode: Mode::EqualNorm,
        ..cfg.optimizer.clone()
    };
    let kbp = OptimizerConfig {
        mode: Mode::KbProjected { k, b },
        ..cfg.optimizer.clone()
    };
    let mut rows = Vec::new();
    let dpsgd = cache.get_or_optimize(&spec, n, 1, &en, schema)?;
    rows.push(table3_row("dp_sgd", cfg, &dpsgd, true)?);
    for &bands in &cfg.bands {
        // the projected variant needs every step in some offset class
        if n <= k * b {
            let f = cache.get_or_optimize(&spec, n, bands, &kbp, schema)?;
            rows.push(table3_row("banded_mf", cfg, &f, false)?);
        } else {
            log::warn!("skipping (k, b)-projected rows: n = {n} > k * b = {}", k * b);
        }
        let t = cache.get_or_optimize(&spec, n, bands, &en, schema)?;
        rows.push(table3_row("banded_mf", cfg, &t, true)?);
    }
    Ok(rows)
}

/// Factor that maps raw RMSE values onto a scale where the min-sep RMSE of
/// the row with `bands` bands and the given column-norm setting equals
/// `value`.
pub fn table3_anchor(rows: &[Table3Row], bands: usize, equal_norms: bool, value: f64) -> Option<f64> {
    rows.iter()
        .find(|r| r.bands == bands && r.equal_norms == equal_norms && r.mechanism == "banded_mf")
        .map(|r| value / r.rmse_minsep)
}

/// Published optimal band counts for prefix sums with `n = 1024`,
/// `δ = 1e-6`; rows follow [`PUBLISHED_EPSILONS`], columns
/// [`PUBLISHED_EPOCHS`].
pub const PUBLISHED_TABLE5: [[usize; 11]; 10] = [
    [2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1],
    [4, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1],
    [8, 4, 2, 1, 1, 1, 1, 1, 1, 1, 1],
    [8, 4, 4, 2, 1, 1, 1, 1, 1, 1, 1],
    [16, 8, 4, 4, 2, 1, 1, 1, 1, 1, 1],
    [32, 16, 8, 4, 2, 2, 1, 1, 1, 1, 1],
    [64, 32, 16, 8, 4, 2, 2, 1, 1, 1, 1],
    [128, 64, 32, 16, 8, 4, 2, 2, 1, 1, 1],
    [1024, 512, 256, 32, 16, 8, 4, 2, 2, 1, 1],
    [1024, 512, 256, 128, 64, 32, 8, 4, 4, 2, 1],
];

pub const PUBLISHED_EPSILONS: [f64; 10] = [0.03125, 0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

pub const PUBLISHED_EPOCHS: [usize; 11] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024];

/// Published cell for `(epsilon, epochs)`, if tabulated.
pub fn published_cell(epsilon: f64, epochs: usize) -> Option<usize> {
    let r = PUBLISHED_EPSILONS.iter().position(|&e| e == epsilon)?;
    let c = PUBLISHED_EPOCHS.iter().position(|&k| k == epochs)?;
    Some(PUBLISHED_TABLE5[r][c])
}

/// Distance between two powers of two in grid steps.
pub fn grid_steps(a: usize, b: usize) -> u32 {
    (a.max(1).ilog2()).abs_diff(b.max(1).ilog2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table5Config {
    pub n: usize,
    pub delta: f64,
    pub cells: Vec<(f64, usize)>,
    pub optimizer: OptimizerConfig,
    pub orders: Vec<f64>,
}

impl Table5Config {
    /// Every `(ε, epochs)` pair of the published table.
    pub fn full() -> Self {
        let cells = PUBLISHED_EPSILONS
            .iter()
            .flat_map(|&e| PUBLISHED_EPOCHS.iter().map(move |&k| (e, k)))
            .collect();
        Self::with_cells(cells)
    }

    pub fn with_cells(cells: Vec<(f64, usize)>) -> Self {
        Self {
            n: 1024,
            delta: 1e-6,
            cells,
            optimizer: OptimizerConfig::default(),
            orders: default_orders(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table5Cell {
    pub epsilon: f64,
    pub epochs: usize,
    pub best: Option<usize>,
    pub rows: Vec<SweepRow>,
}

/// Powers of two up to `n / epochs`, the largest band count that is still
/// amplified when each of the `epochs` passes takes `n / epochs` steps.
pub fn band_grid(n: usize, epochs: usize) -> Vec<usize> {
    let top = n / epochs.max(1);
    std::iter::successors(Some(1usize), |&b| Some(b * 2))
        .take_while(|&b| b <= top)
        .collect()
}

/// Runs one band sweep per cell. Each epoch count `k` uses batch 1 over
/// `m = n / k` records, so that `b̂ = 1` is DP-SGD with sampling rate `k / n`.
/// Factorizations depend only on the band count and are computed once.
pub fn table5(cfg: &Table5Config, cache: &FactorizationCache, exec: Execution) -> Result<Vec<Table5Cell>> {
    let n = cfg.n;
    let spec = WorkloadSpec::Prefix {};
    let en = OptimizerConfig {
        mode: Mode::EqualNorm,
        ..cfg.optimizer.clone()
    };
    for &(_, k) in &cfg.cells {
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("epochs {k} outside [1, {n}]")));
        }
    }
    let mut needed: Vec<usize> = cfg
        .cells
        .iter()
        .flat_map(|&(_, k)| band_grid(n, k))
        .collect();
    needed.sort_unstable();
    needed.dedup();
    // large band counts first so the expensive optimizations start early
    needed.reverse();
    let factors = exec.map_slice(&needed, |&bands| {
        cache
            .get_or_optimize(&spec, n, bands, &en, ParticipationSchema::Single)
            .map(|r| SweepFactor {
                x: r.x,
                c: r.c,
                loss: r.loss,
            })
            .map_err(|e| e.to_string())
    });
    let factors: BTreeMap<usize, std::result::Result<SweepFactor, String>> =
        needed.iter().copied().zip(factors).collect();
    let workload = prefix_workload(n)?;
    let mut out = Vec::with_capacity(cfg.cells.len());
    for &(epsilon, epochs) in &cfg.cells {
        let setup = SweepSetup {
            n,
            m: n / epochs,
            batch: 1,
        };
        let budget = PrivacyBudget::Approx {
            epsilon,
            delta: cfg.delta,
        };
        let grid = band_grid(n, epochs);
        let table = sweep_bands(&workload, &setup, &budget, &grid, &cfg.orders, exec, |b| {
            match &factors[&b] {
                Ok(f) => Ok(f.clone()),
                Err(e) => Err(Error::InvalidArgument(format!("factorization failed: {e}"))),
            }
        })?;
        out.push(Table5Cell {
            epsilon,
            epochs,
            best: table.best,
            rows: table.rows,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(band_grid(1024, 1).last(), Some(&1024));
        assert_eq!(band_grid(1024, 8), vec![1, 2, 4, 8, 16, 32, 64, 128]);
        assert_eq!(band_grid(1024, 1024), vec![1]);
        assert_eq!(grid_steps(32, 64), 1);
        assert_eq!(grid_steps(1, 1024), 10);
    }

    #[test]
    fn published_lookup() {
        assert_eq!(published_cell(1.0, 1), Some(32));
        assert_eq!(published_cell(0.03125, 4), Some(1));
        assert_eq!(published_cell(16.0, 1024), Some(1));
        assert_eq!(published_cell(3.0, 1), None);
    }

    #[test]
    fn small_table3_shape() {
        let cfg = Table3Config {
            n: 24,
            b: 4,
            k: 6,
            bands: vec![2, 4],
            optimizer: OptimizerConfig::default(),
        };
        let rows = table3(&cfg, &FactorizationCache::disabled()).unwrap();
        assert_eq!(rows.len(), 5);
        let dpsgd = &rows[0];
        assert!((dpsgd.sens_single - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(dpsgd.sens_minsep, 1.0);
        for r in &rows {
            assert!(r.sens_minsep_exact);
            assert!(r.rmse_minsep >= r.rmse_kb * (1.0 - 1e-12));
        }
        // equal-norm rows are tight under both schemas
        assert!(rows.iter().filter(|r| r.equal_norms).all(|r| (r.sens_minsep - 1.0).abs() < 1e-12));
        assert!(rows[4].rmse_minsep < dpsgd.rmse_minsep);
    }

    #[test]
    fn small_table5_cells() {
        let mut cfg = Table5Config::with_cells(vec![(16.0, 1), (0.03125, 4)]);
        cfg.n = 64;
        let cells = table5(&cfg, &FactorizationCache::disabled(), Execution::default()).unwrap();
        // large ε favours correlated noise, tiny ε favours amplification
        assert_eq!(cells[0].best, Some(64));
        assert_eq!(cells[1].best, Some(1));
    }
}
