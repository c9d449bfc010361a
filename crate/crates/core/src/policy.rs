//! Recruitment policies: how the per-iteration resource allocation over
//! sites is chosen, and how a real-valued allocation is realized as integer
//! recruitment counts.
//!
//! The adaptive policies draw response-distribution estimates from the
//! Dirichlet belief and minimize the expected post-recruitment cohort
//! distance. Thompson sampling restricts the search to single sites; the
//! distributed policy minimizes over the whole site simplex with an
//! exponentiated-gradient (mirror descent) solver, which keeps iterates
//! feasible natively. For the KL-based metrics the objective is convex in
//! the allocation (the candidate mixture is affine and KL is jointly
//! convex), so the local optimum the solver reaches is global.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::DirichletBelief;
use crate::demographics::{raw_marginals, CohortCounts, JointDistribution, SiteModel};
use crate::error::{CoreError, Result};
use crate::metrics::{self, DistanceMetric, LogBase};
use crate::schema::AttributeSchema;

/// Nonnegative per-site resource fractions summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector {
    weights: Vec<f64>,
}

impl AllocationVector {
    /// Validates nonnegativity and a total within 1e-9 of 1, then normalizes
    /// exactly.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::EmptyInput("allocation vector".into()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(CoreError::InvalidDistribution(
                "allocation weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidDistribution(format!(
                "allocation weights sum to {sum}, expected 1"
            )));
        }
        let mut weights = weights;
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self { weights })
    }

    pub fn uniform(n_sites: usize) -> Self {
        Self {
            weights: vec![1.0 / n_sites as f64; n_sites],
        }
    }

    pub fn one_hot(n_sites: usize, site: usize) -> Self {
        let mut weights = vec![0.0; n_sites];
        weights[site] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Fraction allocated to one site.
    pub fn fraction(&self, site: usize) -> f64 {
        self.weights[site]
    }
}

/// Integer recruitment counts per site, summing exactly to the batch size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegerAllocation {
    counts: Vec<u64>,
    batch: u64,
}

impl IntegerAllocation {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn batch(&self) -> u64 {
        self.batch
    }
}

/// The five recruitment strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// All resources to one uniformly random site each iteration.
    RandomSite,
    /// Equal resources to every site each iteration.
    Uniform,
    /// One empiric-prior optimization before the first iteration, frozen
    /// thereafter.
    InformedStatic,
    /// Posterior draw, then all resources to the single best site.
    Thompson,
    /// Posterior draw, then simplex-constrained minimization over site
    /// combinations.
    DistributedAdaptive,
}

/// Stopping rules for the simplex solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SolverConfig {
    /// Hard iteration cap; exceeding it is reported as non-convergence.
    pub max_iterations: usize,
    /// Converged once one iteration improves the objective by less than this.
    pub tolerance: f64,
    /// Central finite-difference step for metrics without an analytic
    /// gradient.
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-9,
            fd_step: 1e-6,
        }
    }
}

/// Everything a policy needs to score candidate allocations.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub schema: &'a AttributeSchema,
    pub target: &'a JointDistribution,
    pub metric: DistanceMetric,
    pub base: LogBase,
    /// Recruits per iteration (batch size B).
    pub batch: u64,
}

/// Expected cohort distribution if `allocation` were executed: current
/// counts plus `batch` recruits split across the estimated site responses,
/// normalized.
pub fn candidate_mix(
    cohort: &CohortCounts,
    estimates: &[Vec<f64>],
    allocation: &AllocationVector,
    batch: u64,
) -> JointDistribution {
    let mut mixed = vec![0.0; cohort.counts().len()];
    accumulate_mix(cohort, estimates, allocation.weights(), batch, &mut mixed);
    JointDistribution::from_probs(mixed).expect("mixture of valid distributions is valid")
}

fn accumulate_mix(
    cohort: &CohortCounts,
    estimates: &[Vec<f64>],
    weights: &[f64],
    batch: u64,
    out: &mut [f64],
) {
    let b = batch as f64;
    for (o, &c) in out.iter_mut().zip(cohort.counts()) {
        *o = c as f64;
    }
    for (est, &w) in estimates.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, &e) in out.iter_mut().zip(est) {
            *o += b * w * e;
        }
    }
}

/// The allocation objective: mean over the drawn estimate sets of the
/// distance between the candidate mixture and the target.
struct MixObjective<'a> {
    ctx: &'a PolicyContext<'a>,
    cohort: &'a CohortCounts,
    estimate_sets: &'a [Vec<Vec<f64>>],
    target_marginals: Vec<Vec<f64>>,
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl<'a> MixObjective<'a> {
    fn new(
        ctx: &'a PolicyContext<'a>,
        cohort: &'a CohortCounts,
        estimate_sets: &'a [Vec<Vec<f64>>],
    ) -> Self {
        let target_marginals = raw_marginals(ctx.schema, ctx.target.probs());
        let cells = ctx.target.len();
        Self {
            ctx,
            cohort,
            estimate_sets,
            target_marginals,
            scratch: std::cell::RefCell::new(vec![0.0; cells]),
        }
    }

    fn n_sites(&self) -> usize {
        self.estimate_sets[0].len()
    }

    /// Objective value at `weights` (not required to be normalized; the
    /// mixture normalization makes the extension projective).
    fn value(&self, weights: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        let mut mix = self.scratch.borrow_mut();
        for set in self.estimate_sets {
            accumulate_mix(self.cohort, set, weights, self.ctx.batch, &mut mix);
            let sum: f64 = mix.iter().sum();
            for v in mix.iter_mut() {
                *v /= sum;
            }
            total += self.distance(&mix)?;
        }
        Ok(total / self.estimate_sets.len() as f64)
    }

    fn distance(&self, mix: &[f64]) -> Result<f64> {
        match self.ctx.metric {
            DistanceMetric::MultivariateKld => {
                metrics::kl_divergence(mix, self.ctx.target.probs(), self.ctx.base)
            }
            DistanceMetric::UnivariateKldSum => {
                let margs = raw_marginals(self.ctx.schema, mix);
                let mut sum = 0.0;
                for (m, t) in margs.iter().zip(&self.target_marginals) {
                    sum += metrics::kl_divergence(m, t, self.ctx.base)?;
                }
                Ok(sum)
            }
            DistanceMetric::DistanceSummary => {
                let margs = raw_marginals(self.ctx.schema, mix);
                let n = margs.len() as f64;
                Ok(margs
                    .iter()
                    .zip(&self.target_marginals)
                    .map(|(m, t)| metrics::js_distance(m, t))
                    .sum::<f64>()
                    / n)
            }
        }
    }

    /// Gradient at a simplex point: analytic for the KL metrics, central
    /// finite differences on the projective extension otherwise.
    fn gradient(&self, rho: &[f64], fd_step: f64, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|g| *g = 0.0);
        match self.ctx.metric {
            DistanceMetric::DistanceSummary => self.fd_gradient(rho, fd_step, out),
            _ => self.analytic_gradient(rho, out),
        }
    }

    fn analytic_gradient(&self, rho: &[f64], out: &mut [f64]) -> Result<()> {
        let denom = self.cohort.total() as f64 + self.ctx.batch as f64;
        let scale =
            self.ctx.batch as f64 / denom / self.estimate_sets.len() as f64 * self.ctx.base.scale();
        let mut mix = self.scratch.borrow_mut();
        // per-cell derivative of the distance with respect to mixture mass
        let mut cell_grad = vec![0.0; mix.len()];
        for set in self.estimate_sets {
            accumulate_mix(self.cohort, set, rho, self.ctx.batch, &mut mix);
            for v in mix.iter_mut() {
                *v /= denom;
            }
            match self.ctx.metric {
                DistanceMetric::MultivariateKld => {
                    let target = self.ctx.target.probs();
                    for (cell, g) in cell_grad.iter_mut().enumerate() {
                        let (m, p) = (mix[cell], target[cell]);
                        if p == 0.0 && m > 0.0 {
                            return Err(CoreError::UnmatchedSupport { cell, q: m });
                        }
                        *g = if m > 0.0 { (m / p).ln() + 1.0 } else { 1.0 };
                    }
                }
                DistanceMetric::UnivariateKldSum => {
                    let margs = raw_marginals(self.ctx.schema, &mix);
                    let log_ratios: Vec<Vec<f64>> = margs
                        .iter()
                        .zip(&self.target_marginals)
                        .map(|(m, t)| {
                            m.iter()
                                .zip(t)
                                .map(|(&mi, &ti)| {
                                    if mi > 0.0 {
                                        (mi / ti).ln() + 1.0
                                    } else {
                                        1.0
                                    }
                                })
                                .collect()
                        })
                        .collect();
                    for (cell, g) in cell_grad.iter_mut().enumerate() {
                        *g = (0..self.ctx.schema.attribute_count())
                            .map(|a| log_ratios[a][self.ctx.schema.category_of_cell(a, cell)])
                            .sum();
                    }
                }
                DistanceMetric::DistanceSummary => unreachable!("handled by fd_gradient"),
            }
            for (o, est) in out.iter_mut().zip(set) {
                let dot: f64 = est.iter().zip(&cell_grad).map(|(&e, &g)| e * g).sum();
                *o += scale * dot;
            }
        }
        Ok(())
    }

    fn fd_gradient(&self, rho: &[f64], step: f64, out: &mut [f64]) -> Result<()> {
        let mut probe = rho.to_vec();
        for j in 0..rho.len() {
            let h = step * rho[j].max(step);
            probe[j] = rho[j] + h;
            let up = self.value(&probe)?;
            probe[j] = (rho[j] - h).max(0.0);
            let low = self.value(&probe)?;
            out[j] = (up - low) / (rho[j] + h - probe[j]);
            probe[j] = rho[j];
        }
        Ok(())
    }
}

/// Exponentiated-gradient descent over the probability simplex, from the
/// uniform initial point, with backtracking line search. After convergence
/// the solution is checked against every one-hot allocation so the result
/// never scores worse than the best single site under the same estimates
/// (relevant for the non-convex metric).
fn minimize_on_simplex(obj: &MixObjective<'_>, cfg: &SolverConfig) -> Result<(Vec<f64>, f64)> {
    let n = obj.n_sites();
    let mut rho = vec![1.0 / n as f64; n];
    let mut value = obj.value(&rho)?;
    let mut grad = vec![0.0; n];
    let mut step = 1.0;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        obj.gradient(&rho, cfg.fd_step, &mut grad)?;
        let gmin = grad.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut improved = false;
        let mut trial = step;
        for _ in 0..60 {
            let mut cand: Vec<f64> = rho
                .iter()
                .zip(&grad)
                .map(|(&r, &g)| r * (-trial * (g - gmin)).exp())
                .collect();
            let sum: f64 = cand.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                for c in &mut cand {
                    *c /= sum;
                }
                let cv = obj.value(&cand)?;
                if cv < value {
                    let gain = value - cv;
                    rho = cand;
                    value = cv;
                    step = (trial * 2.0).min(1e6);
                    improved = true;
                    if gain < cfg.tolerance {
                        converged = true;
                    }
                    break;
                }
            }
            trial *= 0.5;
        }
        if !improved {
            // no improving step exists at line-search resolution
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(CoreError::SolverNonConvergence {
            iterations: cfg.max_iterations,
            best: value,
            best_allocation: rho,
        });
    }

    // Vertex check: fall back to the best single site if one strictly beats
    // the interior solution (cannot happen for the convex KL objectives).
    let mut best_vertex: Option<(usize, f64)> = None;
    let mut probe = vec![0.0; n];
    for j in 0..n {
        probe.iter_mut().for_each(|p| *p = 0.0);
        probe[j] = 1.0;
        let v = obj.value(&probe)?;
        if v < value - 1e-12 && best_vertex.is_none_or(|(_, bv)| v < bv) {
            best_vertex = Some((j, v));
        }
    }
    if let Some((j, v)) = best_vertex {
        rho.iter_mut().for_each(|p| *p = 0.0);
        rho[j] = 1.0;
        value = v;
    }

    Ok((rho, value))
}

fn draw_estimate_sets<R: Rng + ?Sized>(
    belief: &DirichletBelief,
    draws: usize,
    rng: &mut R,
) -> Vec<Vec<Vec<f64>>> {
    (0..draws.max(1))
        .map(|_| {
            (0..belief.site_count())
                .map(|j| belief.sample_estimate(j, rng))
                .collect()
        })
        .collect()
}

/// Thompson sampling: draw estimates, commit everything to the site whose
/// one-hot candidate mixture scores best. Ties break to the lowest site
/// index.
pub fn thompson_policy<R: Rng + ?Sized>(
    ctx: &PolicyContext<'_>,
    belief: &DirichletBelief,
    cohort: &CohortCounts,
    draws: usize,
    rng: &mut R,
) -> Result<AllocationVector> {
    let sets = draw_estimate_sets(belief, draws, rng);
    let best = thompson_choice(ctx, cohort, &sets)?;
    Ok(AllocationVector::one_hot(sets[0].len(), best))
}

/// Site index minimizing the one-hot candidate mixture distance over the
/// given estimate sets; strict comparison keeps ties at the lowest index.
fn thompson_choice(
    ctx: &PolicyContext<'_>,
    cohort: &CohortCounts,
    estimate_sets: &[Vec<Vec<f64>>],
) -> Result<usize> {
    let obj = MixObjective::new(ctx, cohort, estimate_sets);
    let n = obj.n_sites();
    let mut probe = vec![0.0; n];
    let mut best = (0usize, f64::INFINITY);
    for j in 0..n {
        probe.iter_mut().for_each(|p| *p = 0.0);
        probe[j] = 1.0;
        let v = obj.value(&probe)?;
        if v < best.1 {
            best = (j, v);
        }
    }
    Ok(best.0)
}

/// The distributed adaptive policy: draw estimates, minimize the candidate
/// mixture distance over the whole site simplex.
pub fn distributed_adaptive_policy<R: Rng + ?Sized>(
    ctx: &PolicyContext<'_>,
    belief: &DirichletBelief,
    cohort: &CohortCounts,
    draws: usize,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<AllocationVector> {
    let sets = draw_estimate_sets(belief, draws, rng);
    let obj = MixObjective::new(ctx, cohort, &sets);
    let (rho, _) = minimize_on_simplex(&obj, solver)?;
    AllocationVector::new(rho)
}

/// The knowledge-free strategies.
pub fn naive_policy<R: Rng + ?Sized>(
    kind: PolicyKind,
    n_sites: usize,
    rng: &mut R,
) -> Result<AllocationVector> {
    if n_sites == 0 {
        return Err(CoreError::EmptyInput("no sites".into()));
    }
    match kind {
        PolicyKind::Uniform => Ok(AllocationVector::uniform(n_sites)),
        PolicyKind::RandomSite => Ok(AllocationVector::one_hot(
            n_sites,
            rng.random_range(0..n_sites),
        )),
        other => Err(CoreError::InvalidParameter(format!(
            "{other:?} is not a knowledge-free policy"
        ))),
    }
}

/// Builds an empiric belief by pre-simulation sampling, optimizes once with
/// an empty cohort, and returns the allocation to be frozen for the whole
/// run.
#[allow(clippy::too_many_arguments)]
pub fn informed_static_policy<R: Rng + ?Sized, S: Rng + ?Sized>(
    ctx: &PolicyContext<'_>,
    sites: &[SiteModel],
    samples_per_site: u64,
    draws: usize,
    solver: &SolverConfig,
    prior_rng: &mut R,
    policy_rng: &mut S,
) -> Result<AllocationVector> {
    let belief = DirichletBelief::empiric(sites, samples_per_site, prior_rng)?;
    let cohort = CohortCounts::empty(ctx.target.len());
    distributed_adaptive_policy(ctx, &belief, &cohort, draws, solver, policy_rng)
}

/// Largest-remainder apportionment of `batch * allocation`: floor every
/// quota, then hand the remaining units to the largest fractional
/// remainders, ties to the lower site index. The result sums to `batch`
/// exactly and each count differs from its real quota by less than 1.
pub fn round_allocation(allocation: &AllocationVector, batch: u64) -> IntegerAllocation {
    let n = allocation.len();
    let mut counts = vec![0u64; n];
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut assigned = 0u64;
    for (j, &w) in allocation.weights().iter().enumerate() {
        let quota = w * batch as f64;
        let floor = quota.floor();
        counts[j] = floor as u64;
        assigned += counts[j];
        fracs.push((j, quota - floor));
    }
    let remainder = batch.saturating_sub(assigned) as usize;
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(j, _) in fracs.iter().take(remainder) {
        counts[j] += 1;
    }
    IntegerAllocation { counts, batch }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demographics::MarginalSet;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn flat_schema(cells: usize) -> AttributeSchema {
        AttributeSchema::new(vec![(
            "cell".into(),
            (0..cells).map(|i| i.to_string()).collect(),
        )])
        .unwrap()
    }

    fn ctx<'a>(
        schema: &'a AttributeSchema,
        target: &'a JointDistribution,
        batch: u64,
    ) -> PolicyContext<'a> {
        PolicyContext {
            schema,
            target,
            metric: DistanceMetric::MultivariateKld,
            base: LogBase::Nats,
            batch,
        }
    }

    fn concentrated_belief(dists: &[&[f64]]) -> DirichletBelief {
        let schema = flat_schema(dists[0].len());
        let sites: Vec<SiteModel> = dists
            .iter()
            .enumerate()
            .map(|(i, d)| {
                SiteModel::new(
                    format!("s{i}"),
                    JointDistribution::new(&schema, d.to_vec()).unwrap(),
                )
            })
            .collect();
        DirichletBelief::informed(&sites, 1e9).unwrap()
    }

    #[test]
    fn candidate_mix_recovers_limits() {
        let mut cohort = CohortCounts::empty(2);
        let estimates = vec![vec![0.9, 0.1], vec![0.2, 0.8]];

        // empty cohort, one-hot: exactly that estimate
        let mix = candidate_mix(&cohort, &estimates, &AllocationVector::one_hot(2, 1), 500);
        assert_abs_diff_eq!(mix.probs(), [0.2, 0.8].as_slice(), epsilon = 1e-12);

        // identical estimates: any weights give the common distribution
        let same = vec![vec![0.6, 0.4], vec![0.6, 0.4]];
        let mix = candidate_mix(&cohort, &same, &AllocationVector::uniform(2), 500);
        assert_abs_diff_eq!(mix.probs(), [0.6, 0.4].as_slice(), epsilon = 1e-12);

        // 500 collected at q, 500 more expected at p: equal-weight mixture
        cohort.add_counts(&[500, 0]).unwrap();
        let mix = candidate_mix(&cohort, &estimates, &AllocationVector::one_hot(2, 1), 500);
        assert_abs_diff_eq!(mix.probs(), [0.6, 0.4].as_slice(), epsilon = 1e-12);
    }

    #[test]
    fn thompson_picks_minimal_distance_site() {
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(2);
        let mut rng = ChaCha12Rng::seed_from_u64(0);

        // site 0 equals the target: zero distance is minimal
        let belief = concentrated_belief(&[&[0.5, 0.5], &[0.9, 0.1]]);
        let alloc = thompson_policy(&c, &belief, &cohort, 1, &mut rng).unwrap();
        assert_eq!(alloc.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn thompson_tie_breaks_to_lowest_index() {
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(2);
        // identical estimates at every site: exact tie
        let sets = vec![vec![vec![0.7, 0.3]; 3]];
        assert_eq!(thompson_choice(&c, &cohort, &sets).unwrap(), 0);
    }

    #[test]
    fn thompson_ranks_three_sites() {
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(2);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        // distances to target increase with tilt; middle site is closest
        let belief = concentrated_belief(&[&[0.9, 0.1], &[0.6, 0.4], &[0.75, 0.25]]);
        let alloc = thompson_policy(&c, &belief, &cohort, 1, &mut rng).unwrap();
        assert_eq!(alloc.weights(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn solver_finds_symmetric_mix_of_complementary_sites() {
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(2);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let belief = concentrated_belief(&[&[1.0 - 1e-12, 1e-12], &[1e-12, 1.0 - 1e-12]]);
        let alloc = distributed_adaptive_policy(
            &c,
            &belief,
            &cohort,
            1,
            &SolverConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_abs_diff_eq!(alloc.weights()[0], 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(alloc.weights()[1], 0.5, epsilon = 1e-4);
    }

    #[test]
    fn solver_goes_one_hot_when_a_site_matches_target() {
        let schema = flat_schema(3);
        let target = JointDistribution::new(&schema, vec![0.2, 0.3, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(3);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let belief = concentrated_belief(&[&[0.6, 0.2, 0.2], &[0.2, 0.3, 0.5]]);
        let alloc = distributed_adaptive_policy(
            &c,
            &belief,
            &cohort,
            1,
            &SolverConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(alloc.weights()[1] > 0.999, "weights {:?}", alloc.weights());

        let sets = vec![vec![vec![0.6, 0.2, 0.2], vec![0.2, 0.3, 0.5]]];
        let obj = MixObjective::new(&c, &cohort, &sets);
        assert!(obj.value(alloc.weights()).unwrap() < 1e-6);
    }

    #[test]
    fn solver_returns_uniform_for_identical_sites() {
        // exactly identical estimates: the objective is constant, so the
        // uniform initial point stays put
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(2);
        let sets = vec![vec![vec![0.8, 0.2]; 3]];
        let obj = MixObjective::new(&c, &cohort, &sets);
        let (rho, _) = minimize_on_simplex(&obj, &SolverConfig::default()).unwrap();
        for &w in &rho {
            assert_abs_diff_eq!(w, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn solver_matches_brute_force_grid_on_toys() {
        // 0.01-resolution brute force over 2- and 3-site problems
        let schema = AttributeSchema::new(vec![
            ("x".into(), vec!["0".into(), "1".into()]),
            ("y".into(), vec!["0".into(), "1".into()]),
        ])
        .unwrap();
        let target = crate::demographics::joint_from_marginals(
            &schema,
            &MarginalSet::new(&schema, vec![vec![0.4, 0.6], vec![0.5, 0.5]]).unwrap(),
        );
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(4);
        let estimates = vec![
            vec![0.5, 0.2, 0.2, 0.1],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        let sets = vec![estimates];
        let obj = MixObjective::new(&c, &cohort, &sets);
        let (rho, val) = minimize_on_simplex(&obj, &SolverConfig::default()).unwrap();

        let mut best = f64::INFINITY;
        let steps = 100;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let w = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ];
                best = best.min(obj.value(&w).unwrap());
            }
        }
        assert!(
            val <= best + 1e-3,
            "solver {val} vs grid {best} at {rho:?}"
        );
    }

    #[test]
    fn solver_never_scores_worse_than_any_single_site() {
        let schema = flat_schema(4);
        let target = JointDistribution::new(&schema, vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        let cohort = CohortCounts::empty(4);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let belief = DirichletBelief::jeffreys(3, 4).unwrap();
        for metric in [
            DistanceMetric::MultivariateKld,
            DistanceMetric::UnivariateKldSum,
            DistanceMetric::DistanceSummary,
        ] {
            let c = PolicyContext {
                schema: &schema,
                target: &target,
                metric,
                base: LogBase::Nats,
                batch: 100,
            };
            for _ in 0..5 {
                let sets = draw_estimate_sets(&belief, 1, &mut rng);
                let obj = MixObjective::new(&c, &cohort, &sets);
                let (_, val) = minimize_on_simplex(&obj, &SolverConfig::default()).unwrap();
                let mut probe = vec![0.0; 3];
                for j in 0..3 {
                    probe.iter_mut().for_each(|p| *p = 0.0);
                    probe[j] = 1.0;
                    assert!(val <= obj.value(&probe).unwrap() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn metric_scaling_leaves_argmin_unchanged() {
        // base-2 vs nats scales the KL objective by a constant
        let schema = flat_schema(3);
        let target = JointDistribution::new(&schema, vec![0.3, 0.4, 0.3]).unwrap();
        let cohort = CohortCounts::empty(3);
        let belief = concentrated_belief(&[&[0.7, 0.2, 0.1], &[0.1, 0.4, 0.5]]);
        let mut alloc = Vec::new();
        for base in [LogBase::Nats, LogBase::Bits] {
            let c = PolicyContext {
                schema: &schema,
                target: &target,
                metric: DistanceMetric::MultivariateKld,
                base,
                batch: 500,
            };
            let mut rng = ChaCha12Rng::seed_from_u64(17);
            alloc.push(
                distributed_adaptive_policy(
                    &c,
                    &belief,
                    &cohort,
                    1,
                    &SolverConfig::default(),
                    &mut rng,
                )
                .unwrap(),
            );
        }
        for (a, b) in alloc[0].weights().iter().zip(alloc[1].weights()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-3);
        }
    }

    #[test]
    fn naive_policies() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let u = naive_policy(PolicyKind::Uniform, 9, &mut rng).unwrap();
        for &w in u.weights() {
            assert_abs_diff_eq!(w, 1.0 / 9.0, epsilon = 1e-15);
        }

        let solo = naive_policy(PolicyKind::RandomSite, 1, &mut rng).unwrap();
        assert_eq!(solo.weights(), &[1.0]);

        // frequency check over many draws
        let n = 9;
        let trials = 100_000;
        let mut hits = vec![0u32; n];
        for _ in 0..trials {
            let a = naive_policy(PolicyKind::RandomSite, n, &mut rng).unwrap();
            hits[a.weights().iter().position(|&w| w == 1.0).unwrap()] += 1;
        }
        for &h in &hits {
            let freq = h as f64 / trials as f64;
            assert!((freq - 1.0 / 9.0).abs() < 0.01, "frequency {freq}");
        }

        assert!(naive_policy(PolicyKind::Thompson, 3, &mut rng).is_err());
        assert!(naive_policy(PolicyKind::Uniform, 0, &mut rng).is_err());
    }

    #[test]
    fn informed_static_splits_identical_sites() {
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let site = SiteModel::new(
            "a",
            JointDistribution::new(&schema, vec![0.8, 0.2]).unwrap(),
        );
        let sites = vec![site.clone(), SiteModel { name: "b".into(), ..site }];
        let mut acc = [0.0, 0.0];
        let n_seeds = 100;
        for seed in 0..n_seeds {
            let mut prior_rng = ChaCha12Rng::seed_from_u64(seed);
            let mut policy_rng = ChaCha12Rng::seed_from_u64(seed + 1000);
            let a = informed_static_policy(
                &c,
                &sites,
                1000,
                1,
                &SolverConfig::default(),
                &mut prior_rng,
                &mut policy_rng,
            )
            .unwrap();
            acc[0] += a.weights()[0];
            acc[1] += a.weights()[1];
        }
        assert!((acc[0] / n_seeds as f64 - 0.5).abs() < 0.05);
        assert!((acc[1] / n_seeds as f64 - 0.5).abs() < 0.05);
    }

    #[test]
    fn averaging_multiple_draws_still_finds_the_optimum() {
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(2);
        let belief = concentrated_belief(&[&[0.95, 0.05], &[0.05, 0.95]]);
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let alloc = distributed_adaptive_policy(
            &c,
            &belief,
            &cohort,
            8,
            &SolverConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_abs_diff_eq!(alloc.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(alloc.weights()[0], 0.5, epsilon = 1e-3);
    }

    #[test]
    fn exhausted_iteration_budget_reports_best_iterate() {
        let schema = flat_schema(2);
        let target = JointDistribution::new(&schema, vec![0.5, 0.5]).unwrap();
        let c = ctx(&schema, &target, 500);
        let cohort = CohortCounts::empty(2);
        let sets = vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]]];
        let obj = MixObjective::new(&c, &cohort, &sets);
        let starved = SolverConfig {
            max_iterations: 1,
            ..SolverConfig::default()
        };
        match minimize_on_simplex(&obj, &starved) {
            Err(CoreError::SolverNonConvergence {
                iterations,
                best,
                best_allocation,
            }) => {
                assert_eq!(iterations, 1);
                assert!(best.is_finite());
                assert_abs_diff_eq!(
                    best_allocation.iter().sum::<f64>(),
                    1.0,
                    epsilon = 1e-12
                );
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn rounding_exact_quotas() {
        let a = AllocationVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let r = round_allocation(&a, 500);
        assert_eq!(r.counts(), &[250, 150, 100]);
        assert_eq!(r.batch(), 500);
    }

    #[test]
    fn rounding_thirds_tie_breaks_low_index() {
        let a = AllocationVector::uniform(3);
        let r = round_allocation(&a, 500);
        assert_eq!(r.counts(), &[167, 167, 166]);
    }

    #[test]
    fn rounding_one_hot() {
        let a = AllocationVector::one_hot(4, 2);
        let r = round_allocation(&a, 500);
        assert_eq!(r.counts(), &[0, 0, 500, 0]);
    }

    #[test]
    fn rounding_sums_and_quota_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let a = AllocationVector::new(w).unwrap();
            let batch = rng.random_range(0..2000u64);
            let r = round_allocation(&a, batch);
            assert_eq!(r.counts().iter().sum::<u64>(), batch);
            for (j, &c) in r.counts().iter().enumerate() {
                let quota = a.weights()[j] * batch as f64;
                assert!((c as f64 - quota).abs() < 1.0);
            }
        }
    }

    #[test]
    fn allocation_vector_validation() {
        assert!(AllocationVector::new(vec![0.5, 0.6]).is_err());
        assert!(AllocationVector::new(vec![-0.1, 1.1]).is_err());
        assert!(AllocationVector::new(vec![]).is_err());
        assert!(AllocationVector::new(vec![0.25; 4]).is_ok());
    }
}
