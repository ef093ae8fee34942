//! `bandmf`: optimize, analyze and run banded matrix-factorization mechanisms.
//!
//! Exit codes: 0 success, 1 usage or input error (nothing written),
//! 2 optimization stopped before convergence (outputs still written).

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bandmf::accounting::{
    calibrate_amplified, calibrate_unamplified, default_orders, sweep_bands, AmplifiedSetup,
    PrivacyBudget, Sampling, SweepFactor, SweepSetup,
};
use bandmf::cache::FactorizationCache;
use bandmf::io::{load_bmf, save_bmf, write_csv, StoredMatrix};
use bandmf::noise::NoiseStream;
use bandmf::optimizer::{decoder_frobenius_sq, rmse, FactorizationResult, Mode};
use bandmf::repro::{
    band_grid, grid_steps, published_cell, table3, table3_anchor, table5, Table3Config, Table5Config,
    PUBLISHED_EPOCHS, PUBLISHED_EPSILONS,
};
use bandmf::sensitivity::{max_participations, sensitivity};
use bandmf::{Execution, GramMatrix, ParticipationSchema};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "bandmf", version, about = "Banded matrix-factorization mechanisms")]
struct Cli {
    /// Worker threads for data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a banded factorization and write its encoder.
    Optimize(OptimizeArgs),
    /// Sensitivity of a stored encoder (or Gram matrix) under a participation schema.
    Sensitivity(SensitivityArgs),
    /// RMSE of a stored encoder on a workload.
    Rmse(RmseArgs),
    /// Calibrate the noise multiplier for a privacy budget.
    Calibrate(CalibrateArgs),
    /// Sweep band counts under a fixed budget and pick the best (CSV).
    Sweep(SweepArgs),
    /// Generate correlated noise rows from a stored encoder.
    Noise(NoiseArgs),
    /// Materialize a workload matrix.
    Workload(WorkloadArgs),
    /// Mechanism comparison on prefix sums under (k, b) and min-sep participation (CSV).
    Table3(Table3Args),
    /// Optimal band counts for prefix sums over an ε × epochs grid (CSV).
    Table5(Table5Args),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    EqualNorm,
    Kb,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemaArg {
    Single,
    EveryStep,
    Minsep,
    Kb,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SamplingArg {
    Poisson,
    None,
}

#[derive(Args)]
struct SchemaOpts {
    #[arg(long, value_enum)]
    schema: Option<SchemaArg>,
    /// Participation separation.
    #[arg(long)]
    b: Option<usize>,
    /// Participations (exact count for `kb`, cap for `minsep`).
    #[arg(long)]
    k: Option<usize>,
    /// Cap on min-sep participations, overriding `--k` and the ⌈n/b⌉ default.
    #[arg(long)]
    k_cap: Option<usize>,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Run configuration or bare workload descriptor (JSON).
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long, value_enum, default_value = "equal-norm")]
    mode: ModeArg,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Encoder output (.bmf).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Treat the stored matrix as the Gram matrix X instead of the encoder C.
    #[arg(long)]
    gram: bool,
    #[command(flatten)]
    schema: SchemaOpts,
}

#[derive(Args)]
struct RmseArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    /// Noise multiplier (default: the config's `accounting.sigma`, else 1).
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    schema: SchemaOpts,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// zCDP budget instead of (ε, δ).
    #[arg(long)]
    rho: Option<f64>,
    /// Steps.
    #[arg(long)]
    n: Option<usize>,
    /// Records.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    bands: usize,
    #[arg(long, value_enum, default_value = "poisson")]
    sampling: SamplingArg,
    /// Single unamplified Gaussian release; the multiplier is relative to
    /// the schema sensitivity.
    #[arg(long, conflicts_with_all = ["n", "m", "batch", "sampling"])]
    unamplified: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated band counts (default: powers of two up to n).
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
    /// CSV output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Run configuration supplying defaults for `--sigma` and `--seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    dim: usize,
    /// Steps to emit (default: n).
    #[arg(long)]
    steps: Option<usize>,
    /// Generator seed (default: the config's, else 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Raw little-endian f64 rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    /// Write `AᵀA` instead of `A`.
    #[arg(long)]
    gram: bool,
    /// Output (.bmf or .csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Table3Args {
    #[arg(long, default_value_t = 2052)]
    n: usize,
    #[arg(long, default_value_t = 342)]
    b: usize,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [128, 342])]
    bands: Vec<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Normalized min-sep RMSE assigned to the equal-norm row with `b` bands.
    #[arg(long, default_value_t = 1.05)]
    anchor: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Table5Args {
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    epochs: Vec<usize>,
    /// Only the three cells (1, 8), (1/32, 4), (16, 1024).
    #[arg(long, conflicts_with_all = ["eps", "epochs"])]
    smoke: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Every sweep row as JSON.
    #[arg(long)]
    detail: Option<PathBuf>,
}

enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(t) = cli.threads {
        set_threads(t)?;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Optimize(a) => cmd_optimize(a, exec),
        Command::Sensitivity(a) => cmd_sensitivity(a, exec),
        Command::Rmse(a) => cmd_rmse(a, exec),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Sweep(a) => cmd_sweep(a, exec),
        Command::Noise(a) => cmd_noise(a),
        Command::Workload(a) => cmd_workload(a, exec),
        Command::Table3(a) => cmd_table3(a, exec),
        Command::Table5(a) => cmd_table5(a, exec),
    }
}

#[cfg(feature = "parallel")]
fn set_threads(t: usize) -> Result<()> {
    if t == 0 {
        bail!("--threads must be positive");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(t)
        .build_global()
        .context("configuring thread pool")
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_: usize) -> Result<()> {
    log::warn!("built without the parallel feature; --threads ignored");
    Ok(())
}

fn schema_from(opts: &SchemaOpts, n: usize, default: ParticipationSchema) -> Result<ParticipationSchema> {
    let schema = match opts.schema {
        None => default,
        Some(SchemaArg::Single) => ParticipationSchema::Single,
        Some(SchemaArg::EveryStep) => ParticipationSchema::EveryStep,
        Some(SchemaArg::Minsep) => {
            let b = opts.b.ok_or_else(|| anyhow!("--schema minsep needs --b"))?;
            if b == 0 {
                bail!("--b must be positive");
            }
            let k_cap = opts.k_cap.or(opts.k).unwrap_or_else(|| max_participations(n, b));
            ParticipationSchema::MinSep { b, k_cap }
        }
        Some(SchemaArg::Kb) => {
            let (Some(k), Some(b)) = (opts.k, opts.b) else {
                bail!("--schema kb needs --k and --b");
            };
            ParticipationSchema::FixedKb { k, b }
        }
    };
    schema.validate(n)?;
    Ok(schema)
}

fn budget_from(eps: Option<f64>, delta: Option<f64>, rho: Option<f64>) -> Result<PrivacyBudget> {
    let budget = match (eps, delta, rho) {
        (Some(epsilon), Some(delta), None) => PrivacyBudget::Approx { epsilon, delta },
        (None, None, Some(rho)) => PrivacyBudget::Zcdp { rho },
        _ => bail!("give either --eps with --delta, or --rho"),
    };
    budget.validate()?;
    Ok(budget)
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

#[derive(Serialize)]
struct OptimizeReport {
    n: usize,
    bands: usize,
    mode: Mode,
    loss: f64,
    rmse: f64,
    sensitivity: bandmf::SensitivityReport,
    iterations: usize,
    converged: bool,
    termination: bandmf::optimizer::Termination,
    grad_norm: f64,
    wall_ms: u128,
}

fn cmd_optimize(a: OptimizeArgs, exec: Execution) -> Result<Outcome> {
    let cfg = RunConfig::load(&a.workload)?;
    let n = a.n.or(cfg.n).ok_or_else(|| anyhow!("n missing: pass --n or set it in the config"))?;
    let bands = a
        .bands
        .or(cfg.bands)
        .ok_or_else(|| anyhow!("bands missing: pass --bands or set it in the config"))?;
    if n == 0 || bands == 0 || bands > n {
        bail!("need 1 <= bands <= n, got bands = {bands}, n = {n}");
    }
    let mut opt = cfg.optimizer.clone();
    opt.execution = exec;
    if let Some(it) = a.max_iters {
        opt.max_iters = it;
    }
    let schema = match a.mode {
        ModeArg::Kb => {
            let (Some(k), Some(b)) = (a.k, a.b) else {
                bail!("--mode kb needs --k and --b");
            };
            opt.mode = Mode::KbProjected { k, b };
            cfg.schema.unwrap_or(ParticipationSchema::FixedKb { k, b })
        }
        ModeArg::EqualNorm => {
            opt.mode = Mode::EqualNorm;
            cfg.schema.unwrap_or_else(|| {
                let b = a.b.unwrap_or(bands);
                ParticipationSchema::MinSep {
                    b,
                    k_cap: a.k.unwrap_or_else(|| max_participations(n, b)),
                }
            })
        }
    };
    opt.validate()?;
    schema.validate(n)?;
    let out = a.out.or(cfg.output.matrix.clone());
    let report_path = a.report.or(cfg.output.report.clone());
    let workload = cfg.workload.build(n, exec)?;

    let cache = FactorizationCache::from_env();
    let r: FactorizationResult = cache.get_or_optimize(&cfg.workload, n, bands, &opt, schema)?;
    let report = OptimizeReport {
        n,
        bands,
        mode: opt.mode,
        loss: r.loss,
        rmse: rmse(&workload, &r.c, r.sensitivity.value, 1.0, exec)?,
        sensitivity: r.sensitivity,
        iterations: r.iterations,
        converged: r.converged,
        termination: r.termination,
        grad_norm: r.grad_norm,
        wall_ms: r.wall_ms,
    };
    if let Some(p) = &out {
        save_bmf(p, &StoredMatrix::Banded(r.c.clone()))?;
    }
    write_json(report_path.as_deref(), &report)?;
    if r.converged {
        Ok(Outcome::Done)
    } else {
        log::warn!("optimization stopped: {:?}", r.termination);
        Ok(Outcome::NotConverged)
    }
}

fn load_gram(path: &Path, is_gram: bool) -> Result<GramMatrix> {
    let stored = load_bmf(path).with_context(|| format!("loading {}", path.display()))?;
    if is_gram {
        Ok(GramMatrix::new(stored.to_dense())?)
    } else {
        Ok(stored.into_banded()?.gram())
    }
}

fn cmd_sensitivity(a: SensitivityArgs, exec: Execution) -> Result<Outcome> {
    let x = load_gram(&a.matrix, a.gram)?;
    let n = x.n();
    let default = ParticipationSchema::MinSep {
        b: x.effective_bands(),
        k_cap: max_participations(n, x.effective_bands()),
    };
    let schema = schema_from(&a.schema, n, default)?;
    write_json(None, &sensitivity(&x, schema, exec)?)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct RmseReport {
    n: usize,
    bands: usize,
    loss: f64,
    sensitivity: bandmf::SensitivityReport,
    sigma: f64,
    rmse: f64,
}

fn cmd_rmse(a: RmseArgs, exec: Execution) -> Result<Outcome> {
    let cfg = RunConfig::load(&a.workload)?;
    let c = load_bmf(&a.matrix)
        .with_context(|| format!("loading {}", a.matrix.display()))?
        .into_banded()?;
    let n = c.n();
    if let Some(cn) = cfg.n.filter(|&cn| cn != n) {
        bail!("config n = {cn} but the matrix has n = {n}");
    }
    let sigma = a.sigma.or(cfg.accounting.sigma).unwrap_or(1.0);
    if !(sigma >= 0.0) {
        bail!("sigma must be nonnegative");
    }
    let x = c.gram();
    let default = ParticipationSchema::MinSep {
        b: c.bands(),
        k_cap: max_participations(n, c.bands()),
    };
    let schema = schema_from(&a.schema, n, cfg.schema.unwrap_or(default))?;
    let workload = cfg.workload.build(n, exec)?;
    let sens = sensitivity(&x, schema, exec)?;
    let report = RmseReport {
        n,
        bands: c.bands(),
        loss: decoder_frobenius_sq(&workload, &c, exec)?,
        sensitivity: sens,
        sigma,
        rmse: rmse(&workload, &c, sens.value, sigma, exec)?,
    };
    write_json(None, &report)?;
    Ok(Outcome::Done)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<Outcome> {
    let budget = budget_from(a.eps, a.delta, a.rho)?;
    let orders = default_orders();
    let sigma = if a.unamplified {
        calibrate_unamplified(&budget, &orders)?
    } else {
        let (Some(n), Some(m), Some(batch)) = (a.n, a.m, a.batch) else {
            bail!("amplified calibration needs --n, --m and --batch (or --unamplified)");
        };
        let setup = AmplifiedSetup {
            n,
            m,
            batch,
            bands: a.bands,
            sampling: match a.sampling {
                SamplingArg::Poisson => Sampling::Poisson,
                SamplingArg::None => Sampling::None,
            },
        };
        setup.validate()?;
        calibrate_amplified(&setup, &budget, &orders)?
    };
    println!("{sigma:?}");
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct SweepCsvRow {
    band: usize,
    amplified: bool,
    sigma: Option<f64>,
    sensitivity: Option<f64>,
    loss: Option<f64>,
    total_error: Option<f64>,
    rmse: Option<f64>,
    chosen: bool,
    note: String,
}

fn cmd_sweep(a: SweepArgs, exec: Execution) -> Result<Outcome> {
    let cfg = RunConfig::load(&a.workload)?;
    let n = a.n.or(cfg.n).ok_or_else(|| anyhow!("n missing: pass --n or set it in the config"))?;
    let acc = &cfg.accounting;
    let m = a.m.or(acc.m).ok_or_else(|| anyhow!("m missing"))?;
    let batch = a.batch.or(acc.batch).ok_or_else(|| anyhow!("batch missing"))?;
    let budget = budget_from(a.eps.or(acc.epsilon), a.delta.or(acc.delta), a.rho.or(acc.rho))?;
    let grid = if a.grid.is_empty() { band_grid(n, 1) } else { a.grid.clone() };
    if n == 0 || grid.iter().any(|&b| b == 0 || b > n) {
        bail!("band counts must lie in [1, n = {n}]");
    }
    let mut opt = cfg.optimizer.clone();
    opt.mode = Mode::EqualNorm;
    opt.execution = exec;
    opt.validate()?;
    let workload = cfg.workload.build(n, exec)?;
    let cache = FactorizationCache::from_env();
    let spec = cfg.workload.clone();
    let setup = SweepSetup { n, m, batch };
    let table = sweep_bands(&workload, &setup, &budget, &grid, &default_orders(), exec, |b| {
        let r = cache.get_or_optimize(&spec, n, b, &opt, ParticipationSchema::Single)?;
        Ok(SweepFactor {
            x: r.x,
            c: r.c,
            loss: r.loss,
        })
    })?;
    let mut w = csv_writer(a.out.as_deref())?;
    for r in &table.rows {
        w.serialize(SweepCsvRow {
            band: r.bands,
            amplified: r.amplified,
            sigma: r.noise_multiplier,
            sensitivity: r.sensitivity,
            loss: r.loss,
            total_error: r.total_error,
            rmse: r.rmse,
            chosen: table.best == Some(r.bands),
            note: r.note.clone().unwrap_or_default(),
        })?;
    }
    w.flush()?;
    Ok(Outcome::Done)
}

fn cmd_noise(a: NoiseArgs) -> Result<Outcome> {
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let sigma = a
        .sigma
        .or(cfg.as_ref().and_then(|c| c.accounting.sigma))
        .ok_or_else(|| anyhow!("sigma missing: pass --sigma or set accounting.sigma"))?;
    let seed = a.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let c = load_bmf(&a.matrix)
        .with_context(|| format!("loading {}", a.matrix.display()))?
        .into_banded()?;
    let steps = a.steps.unwrap_or(c.n());
    if steps > c.n() {
        bail!("--steps {steps} exceeds the matrix size {}", c.n());
    }
    let mut stream = NoiseStream::new(c, sigma, a.dim, seed)?;
    let mut out = BufWriter::new(
        File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?,
    );
    let mut row = vec![0.0; a.dim];
    for _ in 0..steps {
        stream.next_noise_row_into(&mut row)?;
        for v in &row {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct WorkloadReport {
    n: usize,
    frobenius_sq: f64,
}

fn cmd_workload(a: WorkloadArgs, exec: Execution) -> Result<Outcome> {
    let cfg = RunConfig::load(&a.workload)?;
    let n = a.n.or(cfg.n).ok_or_else(|| anyhow!("n missing: pass --n or set it in the config"))?;
    let out_kind = match &a.out {
        None => None,
        Some(p) => match p.extension().and_then(|e| e.to_str()) {
            Some("bmf") => Some(true),
            Some("csv") => Some(false),
            _ => bail!("--out must end in .bmf or .csv"),
        },
    };
    let w = cfg.workload.build(n, exec)?;
    let m = if a.gram { w.t().clone() } else { w.a().clone() };
    if let (Some(p), Some(bmf)) = (&a.out, out_kind) {
        if bmf {
            save_bmf(p, &StoredMatrix::Dense(m))?;
        } else {
            write_csv(File::create(p)?, &m)?;
        }
    }
    write_json(
        None,
        &WorkloadReport {
            n,
            frobenius_sq: w.frobenius_sq(),
        },
    )?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct Table3CsvRow {
    mechanism: String,
    bands: String,
    equal_norms: String,
    sens_single: String,
    sens_kb: String,
    sens_minsep: String,
    rmse_kb: String,
    rmse_minsep: String,
    rmse_kb_raw: String,
    rmse_minsep_raw: String,
    loss: String,
    iterations: String,
    converged: String,
}

fn cmd_table3(a: Table3Args, exec: Execution) -> Result<Outcome> {
    let mut cfg = Table3Config {
        n: a.n,
        b: a.b,
        k: a.k,
        bands: a.bands.clone(),
        ..Table3Config::default()
    };
    cfg.optimizer.execution = exec;
    if let Some(it) = a.max_iters {
        cfg.optimizer.max_iters = it;
    }
    if a.bands.iter().any(|&b| b == 0 || b > a.n) {
        bail!("band counts must lie in [1, n = {}]", a.n);
    }
    let rows = table3(&cfg, &FactorizationCache::from_env())?;
    let anchor_bands = if a.bands.contains(&a.b) {
        a.b
    } else {
        *a.bands.iter().max().unwrap_or(&1)
    };
    let scale = table3_anchor(&rows, anchor_bands, true, a.anchor).unwrap_or(1.0);
    let f = |v: f64| format!("{v:.4}");
    let mut w = csv_writer(a.out.as_deref())?;
    let mut converged = true;
    for r in &rows {
        converged &= r.converged;
        w.serialize(Table3CsvRow {
            mechanism: r.mechanism.clone(),
            bands: r.bands.to_string(),
            equal_norms: r.equal_norms.to_string(),
            sens_single: f(r.sens_single),
            sens_kb: f(r.sens_kb),
            sens_minsep: f(r.sens_minsep),
            rmse_kb: f(r.rmse_kb * scale),
            rmse_minsep: f(r.rmse_minsep * scale),
            rmse_kb_raw: format!("{:?}", r.rmse_kb),
            rmse_minsep_raw: format!("{:?}", r.rmse_minsep),
            loss: format!("{:?}", r.loss),
            iterations: r.iterations.to_string(),
            converged: r.converged.to_string(),
        })?;
    }
    let na = || "n/a".to_string();
    w.serialize(Table3CsvRow {
        mechanism: "tree_aggregation".into(),
        bands: na(),
        equal_norms: na(),
        sens_single: na(),
        sens_kb: na(),
        sens_minsep: na(),
        rmse_kb: na(),
        rmse_minsep: na(),
        rmse_kb_raw: na(),
        rmse_minsep_raw: na(),
        loss: na(),
        iterations: na(),
        converged: na(),
    })?;
    w.flush()?;
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

#[derive(Serialize)]
struct Table5CsvRow {
    epsilon: f64,
    epochs: usize,
    best: Option<usize>,
    published: Option<usize>,
    steps_from_published: Option<u32>,
}

fn cmd_table5(a: Table5Args, exec: Execution) -> Result<Outcome> {
    let cells: Vec<(f64, usize)> = if a.smoke {
        vec![(1.0, 8), (0.03125, 4), (16.0, 1024)]
    } else {
        let eps = if a.eps.is_empty() { PUBLISHED_EPSILONS.to_vec() } else { a.eps.clone() };
        let epochs = if a.epochs.is_empty() { PUBLISHED_EPOCHS.to_vec() } else { a.epochs.clone() };
        eps.iter().flat_map(|&e| epochs.iter().map(move |&k| (e, k))).collect()
    };
    let mut cfg = Table5Config::with_cells(cells);
    cfg.n = a.n;
    cfg.delta = a.delta;
    cfg.optimizer.execution = exec;
    if let Some(it) = a.max_iters {
        cfg.optimizer.max_iters = it;
    }
    budget_from(Some(1.0), Some(a.delta), None)?;
    if let Some(&(e, _)) = cfg.cells.iter().find(|c| !(c.0 > 0.0)) {
        bail!("epsilon must be positive, got {e}");
    }
    let result = table5(&cfg, &FactorizationCache::from_env(), exec)?;
    let mut w = csv_writer(a.out.as_deref())?;
    for c in &result {
        let published = if a.n == 1024 && a.delta == 1e-6 {
            published_cell(c.epsilon, c.epochs)
        } else {
            None
        };
        w.serialize(Table5CsvRow {
            epsilon: c.epsilon,
            epochs: c.epochs,
            best: c.best,
            published,
            steps_from_published: c.best.zip(published).map(|(x, y)| grid_steps(x, y)),
        })?;
    }
    w.flush()?;
    if let Some(p) = &a.detail {
        write_json(Some(p), &result)?;
    }
    Ok(Outcome::Done)
}
