//! End-to-end execution of one seeded recruitment run: T iterations of
//! policy → integer rounding → categorical recruitment → belief/cohort
//! update → dynamics step, with full per-iteration telemetry.
//!
//! One root seed spawns independent named generator streams (policy draws,
//! recruitment draws, prior pre-sampling), so toggling one feature never
//! perturbs the draw sequences of the others. Runs are bit-reproducible
//! under a fixed seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{DirichletBelief, PriorScheme};
use crate::demographics::{CohortCounts, JointDistribution, SiteModel};
use crate::dynamics::{step_dynamics, DynamicsConfig};
use crate::error::{CoreError, Result};
use crate::metrics::{self, DistanceMetric, LogBase};
use crate::policy::{
    self, AllocationVector, PolicyContext, PolicyKind, SolverConfig,
};
use crate::schema::AttributeSchema;

/// Named, mutually independent generator streams derived from one root seed.
#[derive(Debug, Clone, Copy)]
enum RngStream {
    Policy = 0,
    Recruitment = 1,
    Prior = 2,
}

fn stream_rng(seed: u64, stream: RngStream) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// The sites, the target population, and the attribute schema they share.
/// This is also the unit serialized by data ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPopulation {
    pub schema: AttributeSchema,
    pub target: JointDistribution,
    pub sites: Vec<SiteModel>,
}

impl StudyPopulation {
    pub fn validate(&self) -> Result<()> {
        let cells = self.schema.cell_count();
        if self.target.len() != cells {
            return Err(CoreError::InvalidConfig(format!(
                "target has {} cells, schema has {cells}",
                self.target.len()
            )));
        }
        if self.sites.is_empty() {
            return Err(CoreError::InvalidConfig("no sites".into()));
        }
        for site in &self.sites {
            if site.response.len() != cells {
                return Err(CoreError::InvalidConfig(format!(
                    "site {} has {} cells, schema has {cells}",
                    site.name,
                    site.response.len()
                )));
            }
        }
        Ok(())
    }
}

/// Per-policy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Posterior draws averaged per objective evaluation (1 matches a single
    /// sample per site per iteration).
    pub estimate_draws: usize,
    /// Pre-simulation samples per site for the informed-static policy.
    pub samples_per_site: u64,
    pub solver: SolverConfig,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            estimate_draws: 1,
            samples_per_site: crate::belief::DEFAULT_EMPIRIC_SAMPLES,
            solver: SolverConfig::default(),
        }
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::new(PolicyKind::DistributedAdaptive)
    }
}

/// Full configuration of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SimulationConfig {
    /// Final cohort size N.
    pub total_cohort: u64,
    /// Number of iterations T; N must be divisible by T.
    pub iterations: usize,
    pub policy: PolicyConfig,
    pub prior: PriorScheme,
    pub metric: DistanceMetric,
    pub log_base: LogBase,
    /// When set, overrides every site's own dynamics factors.
    pub dynamics: Option<DynamicsConfig>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            total_cohort: 10_000,
            iterations: 20,
            policy: PolicyConfig::new(PolicyKind::DistributedAdaptive),
            prior: PriorScheme::default(),
            metric: DistanceMetric::MultivariateKld,
            log_base: LogBase::Nats,
            dynamics: None,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    /// Recruits per iteration (B = N / T).
    pub fn batch(&self) -> u64 {
        self.total_cohort / self.iterations as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CoreError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !self.total_cohort.is_multiple_of(self.iterations as u64) {
            return Err(CoreError::InvalidConfig(format!(
                "cohort size {} is not divisible by {} iterations",
                self.total_cohort, self.iterations
            )));
        }
        if let Some(d) = &self.dynamics {
            DynamicsConfig::new(d.shift_factor, d.bias_factor)?;
        }
        Ok(())
    }
}

/// Cohort distance to the target under all three measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTriple {
    pub multivariate_kld: f64,
    pub univariate_kld_sum: f64,
    pub distance_summary: f64,
}

impl DistanceTriple {
    fn measure(
        schema: &AttributeSchema,
        cohort: &JointDistribution,
        target: &JointDistribution,
        base: LogBase,
    ) -> Result<Self> {
        Ok(Self {
            multivariate_kld: metrics::kl_divergence(cohort.probs(), target.probs(), base)?,
            univariate_kld_sum: metrics::univariate_kld_sum(schema, cohort, target, base)?,
            distance_summary: metrics::distance_summary(schema, cohort, target),
        })
    }

    pub fn get(&self, metric: DistanceMetric) -> f64 {
        match metric {
            DistanceMetric::MultivariateKld => self.multivariate_kld,
            DistanceMetric::UnivariateKldSum => self.univariate_kld_sum,
            DistanceMetric::DistanceSummary => self.distance_summary,
        }
    }
}

/// Telemetry for one iteration. Distances are measured on the cohort after
/// the iteration's recruits are added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Real-valued allocation the policy chose.
    pub allocation: Vec<f64>,
    /// Integer recruitment counts per site.
    pub recruited: Vec<u64>,
    /// Recruited cell counts per site (site-major).
    pub site_cell_counts: Vec<Vec<u64>>,
    pub distances: DistanceTriple,
}

/// Result of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    pub site_names: Vec<String>,
    pub records: Vec<IterationRecord>,
    pub final_cohort: CohortCounts,
    pub final_distances: DistanceTriple,
}

/// Draws `count` independent categorical samples from `response` and returns
/// per-cell counts.
pub fn recruit_batch<R: Rng + ?Sized>(response: &[f64], count: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; response.len()];
    if count == 0 {
        return counts;
    }
    let mut cumulative = Vec::with_capacity(response.len());
    let mut acc = 0.0;
    for &p in response {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    for _ in 0..count {
        let u: f64 = rng.random_range(0.0..total);
        let cell = match cumulative.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        counts[cell.min(response.len() - 1)] += 1;
    }
    counts
}

/// Executes one seeded recruitment run.
pub fn run_simulation(
    population: &StudyPopulation,
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    config.validate()?;
    population.validate()?;

    let schema = &population.schema;
    let cells = schema.cell_count();
    let n_sites = population.sites.len();
    let batch = config.batch();

    let mut policy_rng = stream_rng(config.seed, RngStream::Policy);
    let mut recruit_rng = stream_rng(config.seed, RngStream::Recruitment);
    let mut prior_rng = stream_rng(config.seed, RngStream::Prior);

    let mut sites: Vec<SiteModel> = population
        .sites
        .iter()
        .map(|s| match config.dynamics {
            Some(d) => s.clone().with_dynamics(d),
            None => s.clone(),
        })
        .collect();

    let mut belief = DirichletBelief::from_scheme(config.prior, &sites, &mut prior_rng)?;
    let mut cohort = CohortCounts::empty(cells);

    let ctx = PolicyContext {
        schema,
        target: &population.target,
        metric: config.metric,
        base: config.log_base,
        batch,
    };

    // The informed-static policy samples and optimizes once, before the
    // first iteration, and never re-optimizes.
    let frozen = if config.policy.kind == PolicyKind::InformedStatic {
        Some(policy::informed_static_policy(
            &ctx,
            &sites,
            config.policy.samples_per_site,
            config.policy.estimate_draws,
            &config.policy.solver,
            &mut prior_rng,
            &mut policy_rng,
        )?)
    } else {
        None
    };

    let mut records = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let allocation: AllocationVector = match config.policy.kind {
            PolicyKind::Uniform | PolicyKind::RandomSite => {
                policy::naive_policy(config.policy.kind, n_sites, &mut policy_rng)?
            }
            PolicyKind::InformedStatic => frozen.clone().expect("frozen allocation prepared"),
            PolicyKind::Thompson => policy::thompson_policy(
                &ctx,
                &belief,
                &cohort,
                config.policy.estimate_draws,
                &mut policy_rng,
            )?,
            PolicyKind::DistributedAdaptive => policy::distributed_adaptive_policy(
                &ctx,
                &belief,
                &cohort,
                config.policy.estimate_draws,
                &config.policy.solver,
                &mut policy_rng,
            )?,
        };

        let integer = policy::round_allocation(&allocation, batch);

        let mut site_cell_counts = Vec::with_capacity(n_sites);
        for (j, site) in sites.iter().enumerate() {
            let counts = recruit_batch(site.response.probs(), integer.counts()[j], &mut recruit_rng);
            cohort.add_counts(&counts)?;
            belief.update_with_counts(j, &counts)?;
            site_cell_counts.push(counts);
        }

        for (j, site) in sites.iter_mut().enumerate() {
            *site = step_dynamics(site, allocation.fraction(j))?;
        }

        let distances = DistanceTriple::measure(
            schema,
            &cohort.distribution(schema)?,
            &population.target,
            config.log_base,
        )?;

        records.push(IterationRecord {
            iteration: t,
            allocation: allocation.weights().to_vec(),
            recruited: integer.counts().to_vec(),
            site_cell_counts,
            distances,
        });
    }

    let final_distances = records
        .last()
        .map(|r| r.distances)
        .expect("at least one iteration");

    Ok(SimulationResult {
        config: config.clone(),
        site_names: sites.iter().map(|s| s.name.clone()).collect(),
        records,
        final_cohort: cohort,
        final_distances,
    })
}

/// Re-runs a recorded result's configuration and verifies the rerun
/// reproduces it bit for bit, reporting the first divergent iteration
/// otherwise.
pub fn replay_check(result: &SimulationResult, population: &StudyPopulation) -> Result<()> {
    let rerun = run_simulation(population, &result.config)?;
    for (a, b) in result.records.iter().zip(&rerun.records) {
        if a != b {
            return Err(CoreError::ReplayDivergence {
                iteration: a.iteration,
            });
        }
    }
    if result.records.len() != rerun.records.len()
        || result.final_cohort != rerun.final_cohort
        || result.site_names != rerun.site_names
    {
        return Err(CoreError::ReplayDivergence { iteration: 0 });
    }
    Ok(())
}
