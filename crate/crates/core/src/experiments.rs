//! Replication harness: seeded replicate batteries, Bayesian credible
//! intervals for across-replicate means, and dynamics-factor sweeps.
//!
//! Replicate i runs with seed `base_seed + i` and replicates are independent
//! work units; they execute in parallel and are aggregated in replicate
//! order, so results are schedule-independent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::dynamics::DynamicsConfig;
use crate::error::{CoreError, Result};
use crate::simulator::{run_simulation, SimulationConfig, SimulationResult, StudyPopulation};

/// Which dynamics factor a sweep varies, if any.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "values")]
pub enum SweepAxis {
    #[default]
    None,
    ShiftFactor(Vec<f64>),
    BiasFactor(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::ShiftFactor(_) => "shift-factor",
            SweepAxis::BiasFactor(_) => "bias-factor",
        }
    }
}

/// A replicate battery: one simulation configuration run across many seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: SimulationConfig,
    pub replicates: usize,
    pub base_seed: u64,
    pub sweep: SweepAxis,
}

impl ExperimentSpec {
    pub fn new(base: SimulationConfig, replicates: usize, base_seed: u64) -> Self {
        Self {
            base,
            replicates,
            base_seed,
            sweep: SweepAxis::None,
        }
    }
}

/// Posterior interval for an across-replicate mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub lower: f64,
    pub mean: f64,
    pub upper: f64,
}

impl CredibleInterval {
    pub fn overlaps(&self, other: &CredibleInterval) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Credible interval for the mean of `samples` under a non-informative
/// prior: the posterior of the mean is Student-t with n-1 degrees of
/// freedom, located at the sample mean with scale s/sqrt(n).
pub fn credible_interval(samples: &[f64], level: f64) -> Result<CredibleInterval> {
    let n = samples.len();
    if n < 2 {
        return Err(CoreError::NotEnoughSamples { needed: 2, got: n });
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(CoreError::InvalidParameter(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok(CredibleInterval {
            lower: mean,
            mean,
            upper: mean,
        });
    }
    let scale = (var / nf).sqrt();
    let t = statrs::distribution::StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| CoreError::InvalidParameter(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    Ok(CredibleInterval {
        lower: mean - t * scale,
        mean,
        upper: mean + t * scale,
    })
}

/// Credible intervals for one iteration under all three distance measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricIntervals {
    pub multivariate_kld: CredibleInterval,
    pub univariate_kld_sum: CredibleInterval,
    pub distance_summary: CredibleInterval,
}

/// Across-replicate aggregate of one battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub replicates: usize,
    pub base_seed: u64,
    pub iterations: usize,
    pub site_names: Vec<String>,
    /// Factor value when this aggregate is one sweep point.
    pub factor: Option<f64>,
    /// Per-iteration mean distances with 95% credible intervals.
    pub per_iteration: Vec<MetricIntervals>,
    /// Mean allocation per iteration (iteration-major, then site).
    pub mean_allocation: Vec<Vec<f64>>,
    /// Allocation averaged across all iterations, per site.
    pub avg_allocation: Vec<f64>,
    /// Mean final cohort distribution across replicates.
    pub mean_final_cohort: Vec<f64>,
}

impl AggregateResult {
    pub fn final_interval(&self, metric: crate::metrics::DistanceMetric) -> CredibleInterval {
        let last = self.per_iteration.last().expect("at least one iteration");
        match metric {
            crate::metrics::DistanceMetric::MultivariateKld => last.multivariate_kld,
            crate::metrics::DistanceMetric::UnivariateKldSum => last.univariate_kld_sum,
            crate::metrics::DistanceMetric::DistanceSummary => last.distance_summary,
        }
    }
}

/// The confidence level used throughout the harness.
pub const INTERVAL_LEVEL: f64 = 0.95;

/// Order-independent mean: summing in sorted order makes aggregation exactly
/// permutation-invariant over replicates.
fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.iter().sum::<f64>() / values.len() as f64
}

fn aggregate(results: &[SimulationResult], base_seed: u64, factor: Option<f64>) -> Result<AggregateResult> {
    let n = results.len();
    let iterations = results[0].records.len();
    let n_sites = results[0].site_names.len();
    let cells = results[0].final_cohort.counts().len();

    let mut per_iteration = Vec::with_capacity(iterations);
    let mut mean_allocation = vec![vec![0.0; n_sites]; iterations];
    for (t, allocation_row) in mean_allocation.iter_mut().enumerate() {
        let collect = |f: &dyn Fn(&SimulationResult) -> f64| -> Vec<f64> {
            let mut v: Vec<f64> = results.iter().map(f).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        let mkld = collect(&|r| r.records[t].distances.multivariate_kld);
        let ukld = collect(&|r| r.records[t].distances.univariate_kld_sum);
        let ds = collect(&|r| r.records[t].distances.distance_summary);
        per_iteration.push(MetricIntervals {
            multivariate_kld: credible_interval(&mkld, INTERVAL_LEVEL)?,
            univariate_kld_sum: credible_interval(&ukld, INTERVAL_LEVEL)?,
            distance_summary: credible_interval(&ds, INTERVAL_LEVEL)?,
        });
        for (j, cell) in allocation_row.iter_mut().enumerate() {
            let mut ws: Vec<f64> = results.iter().map(|r| r.records[t].allocation[j]).collect();
            *cell = sorted_mean(&mut ws);
        }
    }

    let mut avg_allocation = vec![0.0; n_sites];
    for (j, acc) in avg_allocation.iter_mut().enumerate() {
        let mut ws: Vec<f64> = mean_allocation.iter().map(|row| row[j]).collect();
        *acc = sorted_mean(&mut ws);
    }

    let mut mean_final_cohort = vec![0.0; cells];
    for (i, acc) in mean_final_cohort.iter_mut().enumerate() {
        let mut ws: Vec<f64> = results
            .iter()
            .map(|r| r.final_cohort.counts()[i] as f64 / r.final_cohort.total() as f64)
            .collect();
        *acc = sorted_mean(&mut ws);
    }

    Ok(AggregateResult {
        replicates: n,
        base_seed,
        iterations,
        site_names: results[0].site_names.clone(),
        factor,
        per_iteration,
        mean_allocation,
        avg_allocation,
        mean_final_cohort,
    })
}

/// Runs `spec.replicates` seeded replicates of the base configuration and
/// aggregates their telemetry. Replicate i uses seed `base_seed + i`; any
/// replicate failure aborts the battery with that seed identified.
pub fn run_replicates(
    population: &StudyPopulation,
    spec: &ExperimentSpec,
) -> Result<AggregateResult> {
    if spec.replicates < 2 {
        return Err(CoreError::NotEnoughSamples {
            needed: 2,
            got: spec.replicates,
        });
    }
    let results: Vec<SimulationResult> = (0..spec.replicates)
        .into_par_iter()
        .map(|i| {
            let mut config = spec.base.clone();
            config.seed = spec.base_seed + i as u64;
            run_simulation(population, &config).map_err(|e| {
                CoreError::InvalidConfig(format!("replicate with seed {} failed: {e}", config.seed))
            })
        })
        .collect::<Result<_>>()?;
    aggregate(&results, spec.base_seed, None)
}

/// Runs one full replicate battery per factor value of the spec's sweep
/// axis, keyed by factor value. The final-iteration distance is the sweep's
/// dependent variable.
pub fn sweep(
    population: &StudyPopulation,
    spec: &ExperimentSpec,
) -> Result<Vec<(f64, AggregateResult)>> {
    let values = match &spec.sweep {
        SweepAxis::None => {
            return Err(CoreError::InvalidConfig(
                "experiment spec has no sweep axis".into(),
            ))
        }
        SweepAxis::ShiftFactor(v) | SweepAxis::BiasFactor(v) => v.clone(),
    };
    if values.is_empty() {
        return Err(CoreError::EmptyInput("sweep has no factor values".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for &value in &values {
        if !value.is_finite() || value <= 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "sweep factor values must be positive, got {value}"
            )));
        }
        let mut point = spec.clone();
        let base_dynamics = spec.base.dynamics.unwrap_or_default();
        point.base.dynamics = Some(match spec.sweep {
            SweepAxis::ShiftFactor(_) => DynamicsConfig::new(value, base_dynamics.bias_factor)?,
            SweepAxis::BiasFactor(_) => DynamicsConfig::new(base_dynamics.shift_factor, value)?,
            SweepAxis::None => unreachable!(),
        });
        let mut agg = run_replicates(population, &point)?;
        agg.factor = Some(value);
        out.push((value, agg));
    }
    Ok(out)
}
