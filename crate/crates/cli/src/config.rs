//! JSON run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use bandmf::optimizer::OptimizerConfig;
use bandmf::workload::WorkloadSpec;
use bandmf::ParticipationSchema;

/// Accounting inputs. Either `epsilon` (with `delta`) or `rho` selects the
/// budget; `sigma` fixes the noise multiplier instead of calibrating it.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountingConfig {
    pub m: Option<usize>,
    pub batch: Option<usize>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub matrix: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub n: Option<usize>,
    pub bands: Option<usize>,
    pub schema: Option<ParticipationSchema>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub accounting: AccountingConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_workload(workload: WorkloadSpec) -> Self {
        Self {
            workload,
            n: None,
            bands: None,
            schema: None,
            optimizer: OptimizerConfig::default(),
            accounting: AccountingConfig::default(),
            output: OutputConfig::default(),
            seed: 0,
        }
    }

    /// Reads either a full run configuration or a bare workload descriptor
    /// (an object with a top-level `kind`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let Some(obj) = value.as_object() else {
            bail!("configuration must be a JSON object");
        };
        if obj.contains_key("kind") {
            Ok(Self::from_workload(serde_json::from_value(value)?))
        } else {
            Ok(serde_json::from_value(value)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_workload() {
        let c = RunConfig::parse(r#"{"kind":"prefix"}"#).unwrap();
        assert_eq!(c.workload, WorkloadSpec::Prefix {});
        assert_eq!(c.n, None);
    }

    #[test]
    fn full_config() {
        let c = RunConfig::parse(
            r#"{"workload":{"kind":"sgdm","beta":0.95,"cooldown":{"tail":0.25,"floor":0.05}},
                "n":32,"bands":4,"schema":{"kind":"min_sep","b":4,"k_cap":8},
                "optimizer":{"max_iters":50},"accounting":{"m":640,"batch":10,"epsilon":1.0,"delta":1e-6},
                "seed":7}"#,
        )
        .unwrap();
        assert_eq!(c.n, Some(32));
        assert_eq!(c.optimizer.max_iters, 50);
        assert_eq!(c.optimizer.grad_tol, 1e-8);
        assert_eq!(c.schema, Some(ParticipationSchema::MinSep { b: 4, k_cap: 8 }));
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse(r#"{"workload":{"kind":"prefix"},"bandz":3}"#).is_err());
        assert!(RunConfig::parse(r#"{"workload":{"kind":"prefix"},"optimizer":{"iters":3}}"#).is_err());
        assert!(RunConfig::parse(r#"{"kind":"prefix","n":3}"#).is_err());
        assert!(RunConfig::parse(r#"[1]"#).is_err());
    }
}
