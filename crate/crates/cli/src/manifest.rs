//! Declarative run manifests: a TOML file naming the data bundle, the
//! simulation configuration, the replicate battery, and an optional sweep
//! axis. Command-line flags override individual fields; the manifest file's
//! SHA-256 hash is recorded in every output for provenance.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cohort_core::experiments::SweepAxis;
use cohort_core::policy::PolicyKind;
use cohort_core::report::ReportFormat;
use cohort_core::simulator::SimulationConfig;

pub const MANIFEST_SCHEMA_VERSION: &str = "1";

fn default_schema_version() -> String {
    MANIFEST_SCHEMA_VERSION.to_string()
}

fn default_replicates() -> usize {
    100
}

fn default_policies() -> Vec<PolicyKind> {
    vec![
        PolicyKind::RandomSite,
        PolicyKind::Uniform,
        PolicyKind::InformedStatic,
        PolicyKind::Thompson,
        PolicyKind::DistributedAdaptive,
    ]
}

fn default_format() -> ReportFormat {
    ReportFormat::Both
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DataSection {
    /// Study population bundle written by `cohort ingest`.
    pub bundle: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default = "default_format")]
    pub format: ReportFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: default_format(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub replicates: usize,
    pub base_seed: u64,
    /// Policies compared by `cohort battery`; each runs the base simulation
    /// configuration with only the policy kind swapped.
    pub policies: Vec<PolicyKind>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            replicates: default_replicates(),
            base_seed: 0,
            policies: default_policies(),
        }
    }
}

/// Sweep grid: either an explicit value list or a (start, stop, step) range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SweepSection {
    /// "shift-factor" or "bias-factor".
    pub axis: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub stop: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
}

impl SweepSection {
    pub fn to_axis(&self) -> Result<SweepAxis> {
        let values = match (&self.values, self.start, self.stop, self.step) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(start), Some(stop), Some(step)) => {
                if step <= 0.0 || stop < start {
                    bail!("[sweep] range needs start <= stop and step > 0");
                }
                let mut values = Vec::new();
                let mut i = 0u32;
                loop {
                    let v = start + f64::from(i) * step;
                    if v > stop + step * 1e-9 {
                        break;
                    }
                    values.push((v * 1e9).round() / 1e9);
                    i += 1;
                }
                values
            }
            _ => bail!("[sweep] needs either values or all of start/stop/step"),
        };
        match self.axis.as_str() {
            "shift-factor" => Ok(SweepAxis::ShiftFactor(values)),
            "bias-factor" => Ok(SweepAxis::BiasFactor(values)),
            other => bail!("[sweep] axis must be shift-factor or bias-factor, got {other:?}"),
        }
    }
}

/// The whole declarative manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default = "default_schema_version")]
    pub schema_version: String,
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// A manifest plus the provenance hash of the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: RunManifest,
    pub hash: String,
    pub dir: PathBuf,
}

impl LoadedManifest {
    /// Bundle path resolved relative to the manifest's directory.
    pub fn bundle_path(&self) -> PathBuf {
        resolve(&self.dir, &self.manifest.data.bundle)
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.dir, &self.manifest.output.dir)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read manifest {}", path.display()))?;
    let manifest: RunManifest = toml::from_str(
        std::str::from_utf8(&bytes).context("manifest is not valid UTF-8")?,
    )
    .with_context(|| format!("cannot parse manifest {}", path.display()))?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        bail!(
            "unsupported manifest schema version {}",
            manifest.schema_version
        );
    }
    manifest
        .simulation
        .validate()
        .context("invalid [simulation] section")?;
    if manifest.experiment.policies.is_empty() {
        bail!("[experiment] policies list is empty");
    }
    if let Some(sweep) = &manifest.sweep {
        sweep.to_axis().context("invalid [sweep] section")?;
    }
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let hash = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    let dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedManifest {
        manifest,
        hash,
        dir,
    })
}
