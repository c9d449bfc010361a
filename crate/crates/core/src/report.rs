//! Figure-ready report emission: flat CSV files plus a JSON dump of the
//! aggregates, each carrying a schema version, the manifest hash, and the
//! base seed in comment headers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! re-parsing a file recovers the in-memory values exactly and repeated
//! exports are byte-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::experiments::{AggregateResult, CredibleInterval};
use crate::schema::AttributeSchema;

/// Version string embedded in every report file header.
pub const REPORT_SCHEMA_VERSION: &str = "1";

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub manifest_hash: String,
    pub base_seed: u64,
}

/// Output format selector for [`export_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

/// A set of labeled aggregates, either one battery per label or one sweep
/// series per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Report {
    Battery {
        schema: AttributeSchema,
        target: Vec<f64>,
        entries: Vec<(String, AggregateResult)>,
    },
    Sweep {
        axis: String,
        entries: Vec<(String, Vec<(f64, AggregateResult)>)>,
    },
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    schema_version: String,
    meta: ReportMeta,
    report: Report,
}

fn header<W: Write>(w: &mut W, meta: &ReportMeta) -> Result<()> {
    writeln!(w, "# cohort-report v{REPORT_SCHEMA_VERSION}")?;
    writeln!(
        w,
        "# manifest_hash={} base_seed={}",
        meta.manifest_hash, meta.base_seed
    )?;
    Ok(())
}

const METRIC_COLUMNS: [&str; 3] = ["multivariate-kld", "univariate-kld-sum", "distance-summary"];

fn interval_of<'a>(m: &'a crate::experiments::MetricIntervals, name: &str) -> &'a CredibleInterval {
    match name {
        "multivariate-kld" => &m.multivariate_kld,
        "univariate-kld-sum" => &m.univariate_kld_sum,
        _ => &m.distance_summary,
    }
}

/// Per-iteration mean distance series with credible intervals, one row per
/// (label, iteration, metric).
pub fn write_iteration_series(
    path: &Path,
    meta: &ReportMeta,
    entries: &[(String, AggregateResult)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, meta)?;
    writeln!(w, "label,iteration,metric,mean,lower,upper")?;
    for (label, agg) in entries {
        for (t, m) in agg.per_iteration.iter().enumerate() {
            for metric in METRIC_COLUMNS {
                let ci = interval_of(m, metric);
                writeln!(
                    w,
                    "{label},{},{metric},{},{},{}",
                    t + 1,
                    ci.mean,
                    ci.lower,
                    ci.upper
                )?;
            }
        }
    }
    Ok(())
}

/// Mean allocation heatmap: per label, one row per iteration plus an AVG
/// row, one column per site.
pub fn write_allocation_heatmap(
    path: &Path,
    meta: &ReportMeta,
    entries: &[(String, AggregateResult)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, meta)?;
    let sites = entries
        .first()
        .map(|(_, a)| a.site_names.clone())
        .ok_or_else(|| CoreError::EmptyInput("no aggregates to report".into()))?;
    writeln!(w, "label,iteration,{}", sites.join(","))?;
    for (label, agg) in entries {
        for (t, row) in agg.mean_allocation.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{label},{},{}", t + 1, cells.join(","))?;
        }
        let avg: Vec<String> = agg.avg_allocation.iter().map(f64::to_string).collect();
        writeln!(w, "{label},AVG,{}", avg.join(","))?;
    }
    Ok(())
}

/// Final-iteration distance as a function of the swept factor, one row per
/// (label, factor, metric).
pub fn write_sweep_series(
    path: &Path,
    meta: &ReportMeta,
    axis: &str,
    entries: &[(String, Vec<(f64, AggregateResult)>)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, meta)?;
    writeln!(w, "label,{axis},metric,mean_final,lower,upper")?;
    for (label, series) in entries {
        for (value, agg) in series {
            let last = agg
                .per_iteration
                .last()
                .ok_or_else(|| CoreError::EmptyInput("aggregate has no iterations".into()))?;
            for metric in METRIC_COLUMNS {
                let ci = interval_of(last, metric);
                writeln!(
                    w,
                    "{label},{value},{metric},{},{},{}",
                    ci.mean, ci.lower, ci.upper
                )?;
            }
        }
    }
    Ok(())
}

/// Cohort-versus-target subgroup proportions: one row per (label, attribute,
/// category) with the target proportion and the mean final cohort
/// proportion.
pub fn write_subgroup_table(
    path: &Path,
    meta: &ReportMeta,
    schema: &AttributeSchema,
    target: &[f64],
    entries: &[(String, AggregateResult)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, meta)?;
    writeln!(w, "label,attribute,category,target,cohort_mean")?;
    let target_marginals = crate::demographics::raw_marginals(schema, target);
    for (label, agg) in entries {
        let cohort_marginals = crate::demographics::raw_marginals(schema, &agg.mean_final_cohort);
        for (a, attr) in schema.attributes().iter().enumerate() {
            for (c, category) in attr.categories.iter().enumerate() {
                writeln!(
                    w,
                    "{label},{},{category},{},{}",
                    attr.name, target_marginals[a][c], cohort_marginals[a][c]
                )?;
            }
        }
    }
    Ok(())
}

/// Writes the full report in the requested format(s); returns the paths
/// written. CSV output is split per figure shape, JSON carries the complete
/// aggregates.
pub fn export_report(
    report: &Report,
    format: ReportFormat,
    meta: &ReportMeta,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    match report {
        Report::Battery { entries, .. } if entries.is_empty() => {
            return Err(CoreError::EmptyInput("report has no entries".into()))
        }
        Report::Sweep { entries, .. }
            if entries.is_empty() || entries.iter().any(|(_, s)| s.is_empty()) =>
        {
            return Err(CoreError::EmptyInput("sweep report has no points".into()))
        }
        _ => {}
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        match report {
            Report::Battery {
                schema,
                target,
                entries,
            } => {
                let series = out_dir.join("iteration_series.csv");
                write_iteration_series(&series, meta, entries)?;
                written.push(series);
                let heatmap = out_dir.join("allocation_heatmap.csv");
                write_allocation_heatmap(&heatmap, meta, entries)?;
                written.push(heatmap);
                let subgroup = out_dir.join("subgroup_proportions.csv");
                write_subgroup_table(&subgroup, meta, schema, target, entries)?;
                written.push(subgroup);
            }
            Report::Sweep { axis, entries } => {
                let sweep = out_dir.join("sweep_series.csv");
                write_sweep_series(&sweep, meta, axis, entries)?;
                written.push(sweep);
            }
        }
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = out_dir.join("report.json");
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(
            &mut w,
            &ReportFile {
                schema_version: REPORT_SCHEMA_VERSION.to_string(),
                meta: meta.clone(),
                report: report.clone(),
            },
        )?;
        w.write_all(b"\n")?;
        written.push(path);
    }
    Ok(written)
}

/// Reads back a JSON report written by [`export_report`].
pub fn read_report(path: &Path) -> Result<(ReportMeta, Report)> {
    let file: ReportFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.schema_version != REPORT_SCHEMA_VERSION {
        return Err(CoreError::InvalidConfig(format!(
            "unsupported report schema version {}",
            file.schema_version
        )));
    }
    Ok((file.meta, file.report))
}

/// Parsed row of an iteration-series CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub label: String,
    pub iteration: usize,
    pub metric: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Re-parses an iteration-series CSV, skipping comment headers. Used to
/// audit that exported files match the in-memory aggregates.
pub fn read_iteration_series(path: &Path) -> Result<Vec<SeriesRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !saw_header {
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CoreError::MalformedInput {
                row: i + 1,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| CoreError::MalformedInput {
                row: i + 1,
                message: format!("unparseable float {s:?}"),
            })
        };
        rows.push(SeriesRow {
            label: fields[0].to_string(),
            iteration: fields[1].parse().map_err(|_| CoreError::MalformedInput {
                row: i + 1,
                message: format!("unparseable iteration {:?}", fields[1]),
            })?,
            metric: fields[2].to_string(),
            mean: parse(fields[3])?,
            lower: parse(fields[4])?,
            upper: parse(fields[5])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::PriorScheme;
    use crate::demographics::{JointDistribution, SiteModel};
    use crate::experiments::{run_replicates, ExperimentSpec};
    use crate::policy::PolicyKind;
    use crate::simulator::{PolicyConfig, SimulationConfig, StudyPopulation};

    fn toy_aggregate() -> (StudyPopulation, AggregateResult) {
        let schema = AttributeSchema::new(vec![
            ("a".into(), vec!["x".into(), "y".into()]),
            ("b".into(), vec!["u".into(), "v".into()]),
        ])
        .unwrap();
        let target = JointDistribution::new(&schema, vec![0.25, 0.25, 0.3, 0.2]).unwrap();
        let pop = StudyPopulation {
            schema: schema.clone(),
            target: target.clone(),
            sites: vec![
                SiteModel::new("s1", target.clone()),
                SiteModel::new(
                    "s2",
                    JointDistribution::new(&schema, vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
                ),
            ],
        };
        let spec = ExperimentSpec::new(
            SimulationConfig {
                total_cohort: 100,
                iterations: 2,
                policy: PolicyConfig::new(PolicyKind::Uniform),
                prior: PriorScheme::Uninformed,
                ..SimulationConfig::default()
            },
            3,
            5,
        );
        let agg = run_replicates(&pop, &spec).unwrap();
        (pop, agg)
    }

    fn meta() -> ReportMeta {
        ReportMeta {
            manifest_hash: "deadbeef".into(),
            base_seed: 5,
        }
    }

    #[test]
    fn battery_export_and_series_roundtrip() {
        let (pop, agg) = toy_aggregate();
        let dir = tempfile::tempdir().unwrap();
        let report = Report::Battery {
            schema: pop.schema.clone(),
            target: pop.target.probs().to_vec(),
            entries: vec![("uniform".into(), agg.clone())],
        };
        let written = export_report(&report, ReportFormat::Both, &meta(), dir.path()).unwrap();
        assert_eq!(written.len(), 4);

        let rows = read_iteration_series(&dir.path().join("iteration_series.csv")).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        for row in &rows {
            let m = &agg.per_iteration[row.iteration - 1];
            let ci = interval_of(m, &row.metric);
            assert_eq!(row.mean, ci.mean);
            assert_eq!(row.lower, ci.lower);
            assert_eq!(row.upper, ci.upper);
        }

        let (read_meta, read_back) = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(read_meta, meta());
        assert_eq!(read_back, report);
    }

    #[test]
    fn heatmap_has_iterations_plus_avg_row_per_label() {
        let (_, agg) = toy_aggregate();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heatmap.csv");
        let entries = vec![("u".to_string(), agg.clone()), ("v".to_string(), agg.clone())];
        write_allocation_heatmap(&path, &meta(), &entries).unwrap();
        let contents = std::fs::read_to_string(&path).unwrap();
        let data_rows = contents
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("label,"))
            .count();
        assert_eq!(data_rows, 2 * (agg.iterations + 1));
        assert_eq!(contents.lines().filter(|l| l.ends_with("AVG") || l.contains(",AVG,")).count(), 2);
    }

    #[test]
    fn exports_are_byte_identical_across_calls() {
        let (pop, agg) = toy_aggregate();
        let report = Report::Battery {
            schema: pop.schema.clone(),
            target: pop.target.probs().to_vec(),
            entries: vec![("uniform".into(), agg)],
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        export_report(&report, ReportFormat::Both, &meta(), d1.path()).unwrap();
        export_report(&report, ReportFormat::Both, &meta(), d2.path()).unwrap();
        for name in [
            "iteration_series.csv",
            "allocation_heatmap.csv",
            "subgroup_proportions.csv",
            "report.json",
        ] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical exports");
        }
    }

    #[test]
    fn empty_reports_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let report = Report::Sweep {
            axis: "shift-factor".into(),
            entries: vec![],
        };
        assert!(matches!(
            export_report(&report, ReportFormat::Csv, &meta(), dir.path()),
            Err(CoreError::EmptyInput(_))
        ));
    }

    #[test]
    fn sweep_export_writes_series() {
        let (_, agg) = toy_aggregate();
        let dir = tempfile::tempdir().unwrap();
        let report = Report::Sweep {
            axis: "bias-factor".into(),
            entries: vec![("adaptive".into(), vec![(0.9, agg.clone()), (1.1, agg)])],
        };
        let written = export_report(&report, ReportFormat::Csv, &meta(), dir.path()).unwrap();
        let contents = std::fs::read_to_string(&written[0]).unwrap();
        assert!(contents.contains("label,bias-factor,metric,mean_final,lower,upper"));
        assert_eq!(
            contents
                .lines()
                .filter(|l| l.starts_with("adaptive,"))
                .count(),
            2 * 3
        );
    }
}
