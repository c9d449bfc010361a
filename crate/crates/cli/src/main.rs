//! Operator surface for the recruitment simulation engine: ingest site
//! data, run single simulations, run replicate batteries and dynamics
//! sweeps, and re-emit reports, all driven by declarative TOML manifests.

mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use cohort_core::experiments::{run_replicates, sweep, AggregateResult, ExperimentSpec, SweepAxis};
use cohort_core::io::{
    population_from_table, read_census_marginals, read_population, read_ratio_table,
    write_population,
};
use cohort_core::metrics::{kl_divergence, DistanceMetric, LogBase};
use cohort_core::policy::PolicyKind;
use cohort_core::report::{export_report, read_report, Report, ReportFormat, ReportMeta};
use cohort_core::simulator::{run_simulation, SimulationResult};
use cohort_core::{PriorScheme, StudyPopulation};

use manifest::{load_manifest, LoadedManifest};

#[derive(Parser)]
#[command(name = "cohort", version, about = "Multi-site recruitment simulation engine")]
struct Cli {
    /// Worker threads for replicate execution (default: all cores).
    /// Output is identical regardless of this setting.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a study population bundle from a site ratio table.
    Ingest {
        /// Ratio table CSV: attribute,category[,census],<site columns>
        #[arg(long)]
        ratios: PathBuf,
        /// Census marginals CSV (attribute,category,proportion); overrides
        /// or supplies the ratio table's census column.
        #[arg(long)]
        census: Option<PathBuf>,
        /// Output bundle path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Log base for the printed per-site divergences.
        #[arg(long, default_value = "nats")]
        log_base: String,
    },
    /// Run one seeded simulation from a manifest.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        /// Override the manifest's policy kind.
        #[arg(long)]
        policy: Option<String>,
        /// Override the manifest's prior scheme (uninformed | empiric | informed).
        #[arg(long)]
        prior: Option<String>,
        /// Override the manifest's distance metric.
        #[arg(long)]
        metric: Option<String>,
        /// Override the manifest's seed.
        #[arg(long, env = "COHORT_SEED")]
        seed: Option<u64>,
        /// Override the manifest's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a replicate battery for every policy listed in the manifest.
    Battery {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, env = "COHORT_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the manifest's dynamics-factor sweep for every listed policy.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, env = "COHORT_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-emit CSV reports from a saved JSON report.
    Report {
        /// A report.json written by battery or sweep.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("worker pool initialized once");
    }
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            ratios,
            census,
            out,
            log_base,
        } => cmd_ingest(&ratios, census.as_deref(), &out, &log_base),
        Command::Simulate {
            manifest,
            policy,
            prior,
            metric,
            seed,
            out_dir,
        } => {
            let mut loaded = load_manifest(&manifest)?;
            let sim = &mut loaded.manifest.simulation;
            if let Some(p) = policy {
                sim.policy.kind = parse_kebab(&p).context("invalid --policy")?;
            }
            if let Some(p) = prior {
                sim.prior = parse_prior(&p)?;
            }
            if let Some(m) = metric {
                sim.metric = parse_kebab(&m).context("invalid --metric")?;
            }
            if let Some(s) = seed {
                sim.seed = s;
            }
            cmd_simulate(&loaded, out_dir)
        }
        Command::Battery {
            manifest,
            replicates,
            seed,
            out_dir,
        } => {
            let mut loaded = load_manifest(&manifest)?;
            if let Some(r) = replicates {
                loaded.manifest.experiment.replicates = r;
            }
            if let Some(s) = seed {
                loaded.manifest.experiment.base_seed = s;
            }
            cmd_battery(&loaded, out_dir)
        }
        Command::Sweep {
            manifest,
            replicates,
            seed,
            out_dir,
        } => {
            let mut loaded = load_manifest(&manifest)?;
            if let Some(r) = replicates {
                loaded.manifest.experiment.replicates = r;
            }
            if let Some(s) = seed {
                loaded.manifest.experiment.base_seed = s;
            }
            cmd_sweep(&loaded, out_dir)
        }
        Command::Report { from, out_dir } => cmd_report(&from, &out_dir),
    }
}

/// Parses a kebab-case enum value via its serde representation.
fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|e| anyhow::anyhow!("{e}"))
}

fn parse_prior(s: &str) -> Result<PriorScheme> {
    Ok(match s {
        "uninformed" => PriorScheme::Uninformed,
        "empiric" => PriorScheme::Empiric {
            samples_per_site: cohort_core::belief::DEFAULT_EMPIRIC_SAMPLES,
        },
        "informed" => PriorScheme::Informed {
            mass: cohort_core::belief::DEFAULT_INFORMED_MASS,
        },
        other => bail!("invalid --prior {other:?} (uninformed | empiric | informed)"),
    })
}

fn policy_label(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::RandomSite => "random-site",
        PolicyKind::Uniform => "uniform",
        PolicyKind::InformedStatic => "informed-static",
        PolicyKind::Thompson => "thompson",
        PolicyKind::DistributedAdaptive => "distributed-adaptive",
    }
}

fn cmd_ingest(ratios: &Path, census: Option<&Path>, out: &Path, log_base: &str) -> Result<()> {
    let base: LogBase = parse_kebab(log_base).context("invalid --log-base")?;
    let table = read_ratio_table(ratios)
        .with_context(|| format!("cannot ingest ratio table {}", ratios.display()))?;
    let census_values = match census {
        Some(path) => {
            let (schema, values) = read_census_marginals(path)?;
            if schema != table.schema {
                bail!(
                    "census file schema does not match the ratio table \
                     (attributes or categories differ)"
                );
            }
            Some(values)
        }
        None => None,
    };
    let population = population_from_table(&table, census_values.as_deref())?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_population(&population, out)?;
    // read-back validation keeps exit status honest
    let population = read_population(out)?;

    println!(
        "wrote {} ({} sites, {} cells)",
        out.display(),
        population.sites.len(),
        population.schema.cell_count()
    );
    println!("site divergences to target ({log_base}):");
    for site in &population.sites {
        let d = kl_divergence(site.response.probs(), population.target.probs(), base)?;
        println!("  {:<6} {d:.4}", site.name);
    }
    Ok(())
}

fn load_population(loaded: &LoadedManifest) -> Result<StudyPopulation> {
    let path = loaded.bundle_path();
    read_population(&path)
        .with_context(|| format!("cannot load population bundle {}", path.display()))
}

#[derive(Serialize)]
struct SimulationFile<'a> {
    schema_version: &'static str,
    manifest_hash: &'a str,
    result: &'a SimulationResult,
}

fn cmd_simulate(loaded: &LoadedManifest, out_dir: Option<PathBuf>) -> Result<()> {
    let population = load_population(loaded)?;
    let config = &loaded.manifest.simulation;
    let result = run_simulation(&population, config)?;

    let dir = out_dir.unwrap_or_else(|| loaded.output_dir());
    std::fs::create_dir_all(&dir)?;

    let json_path = dir.join("simulation.json");
    let mut w = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(
        &mut w,
        &SimulationFile {
            schema_version: cohort_core::report::REPORT_SCHEMA_VERSION,
            manifest_hash: &loaded.hash,
            result: &result,
        },
    )?;
    w.write_all(b"\n")?;
    drop(w);
    // validation read-back
    let _: serde_json::Value = serde_json::from_reader(File::open(&json_path)?)?;

    let csv_path = dir.join("simulation.csv");
    write_simulation_csv(&csv_path, &loaded.hash, &result)?;

    println!(
        "policy {} seed {}: final multivariate KLD {:.4}, univariate sum {:.4}, distance summary {:.4}",
        policy_label(result.config.policy.kind),
        result.config.seed,
        result.final_distances.multivariate_kld,
        result.final_distances.univariate_kld_sum,
        result.final_distances.distance_summary,
    );
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

/// Flat per-(iteration, site) telemetry for plotting.
fn write_simulation_csv(path: &Path, hash: &str, result: &SimulationResult) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# cohort-report v{}",
        cohort_core::report::REPORT_SCHEMA_VERSION
    )?;
    writeln!(w, "# manifest_hash={hash} base_seed={}", result.config.seed)?;
    writeln!(
        w,
        "iteration,site,allocation,recruited,multivariate_kld,univariate_kld_sum,distance_summary"
    )?;
    for record in &result.records {
        for (j, name) in result.site_names.iter().enumerate() {
            writeln!(
                w,
                "{},{name},{},{},{},{},{}",
                record.iteration,
                record.allocation[j],
                record.recruited[j],
                record.distances.multivariate_kld,
                record.distances.univariate_kld_sum,
                record.distances.distance_summary,
            )?;
        }
    }
    Ok(())
}

fn battery_for_policy(
    loaded: &LoadedManifest,
    kind: PolicyKind,
    sweep_axis: SweepAxis,
) -> (String, ExperimentSpec) {
    let mut config = loaded.manifest.simulation.clone();
    config.policy.kind = kind;
    let spec = ExperimentSpec {
        base: config,
        replicates: loaded.manifest.experiment.replicates,
        base_seed: loaded.manifest.experiment.base_seed,
        sweep: sweep_axis,
    };
    (policy_label(kind).to_string(), spec)
}

fn cmd_battery(loaded: &LoadedManifest, out_dir: Option<PathBuf>) -> Result<()> {
    let population = load_population(loaded)?;
    let mut entries: Vec<(String, AggregateResult)> = Vec::new();
    for &kind in &loaded.manifest.experiment.policies {
        let (label, spec) = battery_for_policy(loaded, kind, SweepAxis::None);
        let agg = run_replicates(&population, &spec)
            .with_context(|| format!("battery for policy {label} failed"))?;
        println!(
            "{label}: mean final multivariate KLD {:.4}",
            agg.final_interval(DistanceMetric::MultivariateKld).mean
        );
        entries.push((label, agg));
    }
    let report = Report::Battery {
        schema: population.schema.clone(),
        target: population.target.probs().to_vec(),
        entries,
    };
    let meta = ReportMeta {
        manifest_hash: loaded.hash.clone(),
        base_seed: loaded.manifest.experiment.base_seed,
    };
    let dir = out_dir.unwrap_or_else(|| loaded.output_dir());
    let written = export_report(&report, loaded.manifest.output.format, &meta, &dir)?;
    verify_outputs(&written)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(loaded: &LoadedManifest, out_dir: Option<PathBuf>) -> Result<()> {
    let axis = match &loaded.manifest.sweep {
        Some(section) => section.to_axis()?,
        None => bail!("manifest has no [sweep] section"),
    };
    let population = load_population(loaded)?;
    let axis_name = axis.name().to_string();
    let mut entries = Vec::new();
    for &kind in &loaded.manifest.experiment.policies {
        let (label, spec) = battery_for_policy(loaded, kind, axis.clone());
        let series = sweep(&population, &spec)
            .with_context(|| format!("sweep for policy {label} failed"))?;
        println!("{label}: swept {} factor values", series.len());
        entries.push((label, series));
    }
    let report = Report::Sweep {
        axis: axis_name,
        entries,
    };
    let meta = ReportMeta {
        manifest_hash: loaded.hash.clone(),
        base_seed: loaded.manifest.experiment.base_seed,
    };
    let dir = out_dir.unwrap_or_else(|| loaded.output_dir());
    let written = export_report(&report, loaded.manifest.output.format, &meta, &dir)?;
    verify_outputs(&written)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_report(from: &Path, out_dir: &Path) -> Result<()> {
    let (meta, report) = read_report(from)
        .with_context(|| format!("cannot read report {}", from.display()))?;
    let written = export_report(&report, ReportFormat::Csv, &meta, out_dir)?;
    verify_outputs(&written)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Exit status 0 requires every written file to exist and be non-empty.
fn verify_outputs(paths: &[PathBuf]) -> Result<()> {
    for path in paths {
        let meta = std::fs::metadata(path)
            .with_context(|| format!("output {} was not written", path.display()))?;
        if meta.len() == 0 {
            bail!("output {} is empty", path.display());
        }
    }
    Ok(())
}
