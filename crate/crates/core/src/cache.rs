//! Content-addressed cache of optimized factorizations.
//!
//! Entries are keyed by the SHA-256 of the workload descriptor, `n`, the band
//! count, the optimizer mode and the optimizer's numerical settings. Each entry
//! stores the lower band of `X` and the encoder `C` as `.bmf` files plus a
//! small JSON summary. Files are written to a temporary name and renamed, so
//! concurrent writers never expose partial entries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gram::GramMatrix;
use crate::io::{load_bmf, save_bmf, StoredMatrix};
use crate::optimizer::{optimize_banded, FactorizationResult, Mode, OptimizerConfig, Termination};
use crate::sensitivity::{sensitivity, ParticipationSchema};
use crate::workload::WorkloadSpec;
use crate::{Error, Result};

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "BANDMF_CACHE_DIR";

#[derive(Debug, Serialize)]
struct KeyMaterial<'a> {
    format: u32,
    workload: &'a WorkloadSpec,
    n: usize,
    bands: usize,
    mode: Mode,
    max_iters: usize,
    grad_tol: f64,
    rel_loss_tol: f64,
    lbfgs_memory: usize,
    backtrack: f64,
    armijo_c1: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    loss: f64,
    iterations: usize,
    converged: bool,
    termination: Termination,
    grad_norm: f64,
    wall_ms: u128,
}

/// Hex SHA-256 cache key of an optimization request.
pub fn cache_key(spec: &WorkloadSpec, n: usize, bands: usize, cfg: &OptimizerConfig) -> String {
    let material = KeyMaterial {
        format: 1,
        workload: spec,
        n,
        bands,
        mode: cfg.mode,
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        rel_loss_tol: cfg.rel_loss_tol,
        lbfgs_memory: cfg.lbfgs_memory,
        backtrack: cfg.backtrack,
        armijo_c1: cfg.armijo_c1,
    };
    let json = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Debug, Clone, Default)]
pub struct FactorizationCache {
    dir: Option<PathBuf>,
}

impl FactorizationCache {
    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
        }
    }

    /// Uses `$BANDMF_CACHE_DIR` when set and non-empty.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(d) if !d.is_empty() => Self::at(d),
            _ => Self::disabled(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Loads the cached factorization or optimizes and stores it. The
    /// sensitivity is always recomputed for `schema`.
    pub fn get_or_optimize(
        &self,
        spec: &WorkloadSpec,
        n: usize,
        bands: usize,
        cfg: &OptimizerConfig,
        schema: ParticipationSchema,
    ) -> Result<FactorizationResult> {
        let Some(dir) = &self.dir else {
            let w = spec.build(n, cfg.execution)?;
            return optimize_banded(&w, bands, cfg, schema);
        };
        let key = cache_key(spec, n, bands, cfg);
        if let Some(hit) = self.load(dir, &key, schema, cfg)? {
            log::debug!("cache hit {key}");
            return Ok(hit);
        }
        let w = spec.build(n, cfg.execution)?;
        let result = optimize_banded(&w, bands, cfg, schema)?;
        self.store(dir, &key, &result)?;
        Ok(result)
    }

    fn paths(dir: &Path, key: &str) -> (PathBuf, PathBuf, PathBuf) {
        (
            dir.join(format!("{key}.x.bmf")),
            dir.join(format!("{key}.c.bmf")),
            dir.join(format!("{key}.json")),
        )
    }

    fn load(
        &self,
        dir: &Path,
        key: &str,
        schema: ParticipationSchema,
        cfg: &OptimizerConfig,
    ) -> Result<Option<FactorizationResult>> {
        let (xp, cp, sp) = Self::paths(dir, key);
        if !(xp.exists() && cp.exists() && sp.exists()) {
            return Ok(None);
        }
        let summary: Summary = serde_json::from_slice(&fs::read(&sp)?)?;
        let x_band = match load_bmf(&xp)? {
            StoredMatrix::Banded(b) => b,
            StoredMatrix::Dense(_) => return Err(Error::Format("cached Gram band is dense".into())),
        };
        let c = load_bmf(&cp)?.into_banded()?;
        let x = GramMatrix::from_lower_band(&x_band);
        let sensitivity = sensitivity(&x, schema, cfg.execution)?;
        Ok(Some(FactorizationResult {
            x,
            c,
            loss: summary.loss,
            sensitivity,
            iterations: summary.iterations,
            converged: summary.converged,
            termination: summary.termination,
            loss_history: vec![summary.loss],
            grad_norm: summary.grad_norm,
            wall_ms: summary.wall_ms,
        }))
    }

    fn store(&self, dir: &Path, key: &str, r: &FactorizationResult) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (xp, cp, sp) = Self::paths(dir, key);
        let bands = r.c.bands();
        let x_band = r.x.lower_band(bands)?;
        let summary = Summary {
            loss: r.loss,
            iterations: r.iterations,
            converged: r.converged,
            termination: r.termination,
            grad_norm: r.grad_norm,
            wall_ms: r.wall_ms,
        };
        write_atomic(&xp, |p| save_bmf(p, &StoredMatrix::Banded(x_band.clone())))?;
        write_atomic(&cp, |p| save_bmf(p, &StoredMatrix::Banded(r.c.clone())))?;
        // the summary goes last: its presence marks a complete entry
        write_atomic(&sp, |p| Ok(fs::write(p, serde_json::to_vec_pretty(&summary)?)?))?;
        Ok(())
    }
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    write(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_inputs() {
        let cfg = OptimizerConfig::default();
        let p = WorkloadSpec::Prefix {};
        let k = cache_key(&p, 64, 8, &cfg);
        assert_eq!(k.len(), 64);
        assert_eq!(k, cache_key(&p, 64, 8, &cfg));
        assert_ne!(k, cache_key(&p, 64, 9, &cfg));
        assert_ne!(k, cache_key(&p, 65, 8, &cfg));
        let kb = OptimizerConfig {
            mode: Mode::KbProjected { k: 4, b: 16 },
            ..cfg.clone()
        };
        assert_ne!(k, cache_key(&p, 64, 8, &kb));
        let seq = OptimizerConfig {
            execution: crate::Execution::Sequential,
            ..cfg
        };
        assert_eq!(k, cache_key(&p, 64, 8, &seq));
    }

    #[test]
    fn round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FactorizationCache::at(dir.path());
        let cfg = OptimizerConfig::default();
        let spec = WorkloadSpec::Prefix {};
        let schema = ParticipationSchema::MinSep { b: 4, k_cap: 4 };
        let first = cache.get_or_optimize(&spec, 16, 4, &cfg, schema).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 3);
        let second = cache.get_or_optimize(&spec, 16, 4, &cfg, schema).unwrap();
        assert_eq!(first.x, second.x);
        assert_eq!(first.c, second.c);
        assert_eq!(first.loss, second.loss);
        assert_eq!(first.sensitivity, second.sensitivity);
    }
}
