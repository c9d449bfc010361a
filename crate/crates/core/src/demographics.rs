//! Demographic distributions: marginals per attribute, joint distributions
//! over the full cell space, cohort counts, and site models.
//!
//! Joints are built from marginals under attribute independence (the only
//! construction available when sources publish univariate distributions
//! only). All probability vectors are validated and renormalized at
//! construction; after construction they are immutable.

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsConfig;
use crate::error::{CoreError, Result};
use crate::schema::AttributeSchema;

/// Tolerance for "sums to one" checks on constructed distributions.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Category labels excluded when cleaning raw counts into distributions.
pub const EXCLUDED_LABELS: [&str; 5] = [
    "No Information",
    "Unknown",
    "Ambiguous",
    "Refuse to answer",
    "Other",
];

fn normalize_in_place(v: &mut [f64], what: &str) -> Result<()> {
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(CoreError::InvalidDistribution(format!(
            "{what} contains invalid entry {x}"
        )));
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(CoreError::InvalidDistribution(format!(
            "{what} has zero total mass"
        )));
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

/// One probability vector per attribute of a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSet {
    vectors: Vec<Vec<f64>>,
}

impl MarginalSet {
    /// Validates dimensions against `schema` and renormalizes each vector.
    pub fn new(schema: &AttributeSchema, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() != schema.attribute_count() {
            return Err(CoreError::DimensionMismatch {
                expected: schema.attribute_count(),
                got: vectors.len(),
                context: "marginal vectors".into(),
            });
        }
        let mut vectors = vectors;
        for (attr, v) in vectors.iter_mut().enumerate() {
            let name = &schema.attributes()[attr].name;
            if v.len() != schema.category_count(attr) {
                return Err(CoreError::DimensionMismatch {
                    expected: schema.category_count(attr),
                    got: v.len(),
                    context: format!("marginal for {name}"),
                });
            }
            normalize_in_place(v, &format!("marginal for {name}"))?;
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn attribute(&self, attr: usize) -> &[f64] {
        &self.vectors[attr]
    }
}

/// Probability vector over the full joint cell space of a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    probs: Vec<f64>,
}

impl JointDistribution {
    /// Validates nonnegativity and renormalizes; the input must have positive
    /// total mass and one entry per cell.
    pub fn new(schema: &AttributeSchema, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != schema.cell_count() {
            return Err(CoreError::DimensionMismatch {
                expected: schema.cell_count(),
                got: probs.len(),
                context: "joint distribution".into(),
            });
        }
        let mut probs = probs;
        normalize_in_place(&mut probs, "joint distribution")?;
        Ok(Self { probs })
    }

    /// Validates and renormalizes without checking length against a schema.
    /// Used where the cell space is already established by the caller.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let mut probs = probs;
        if probs.is_empty() {
            return Err(CoreError::EmptyInput("joint distribution".into()));
        }
        normalize_in_place(&mut probs, "joint distribution")?;
        Ok(Self { probs })
    }

    /// Uniform distribution over all cells.
    pub fn uniform(schema: &AttributeSchema) -> Self {
        let n = schema.cell_count();
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Integer recruit counts per cell, accumulated across iterations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortCounts {
    counts: Vec<u64>,
    total: u64,
}

impl CohortCounts {
    pub fn empty(cell_count: usize) -> Self {
        Self {
            counts: vec![0; cell_count],
            total: 0,
        }
    }

    /// Adds per-cell recruit counts. Counts only ever grow.
    pub fn add_counts(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.counts.len(),
                got: counts.len(),
                context: "cohort cell counts".into(),
            });
        }
        for (c, &add) in self.counts.iter_mut().zip(counts) {
            *c += add;
        }
        self.total += counts.iter().sum::<u64>();
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Empirical distribution of the cohort. Errors while the cohort is empty.
    pub fn distribution(&self, schema: &AttributeSchema) -> Result<JointDistribution> {
        if self.total == 0 {
            return Err(CoreError::EmptyInput("cohort has no recruits".into()));
        }
        JointDistribution::new(schema, self.counts.iter().map(|&c| c as f64).collect())
    }
}

/// A recruitment site: its current response distribution plus the dynamics
/// factors governing how that distribution evolves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub name: String,
    pub response: JointDistribution,
    pub dynamics: DynamicsConfig,
}

impl SiteModel {
    pub fn new(name: impl Into<String>, response: JointDistribution) -> Self {
        Self {
            name: name.into(),
            response,
            dynamics: DynamicsConfig::default(),
        }
    }

    pub fn with_dynamics(mut self, dynamics: DynamicsConfig) -> Self {
        self.dynamics = dynamics;
        self
    }
}

/// Builds the joint distribution of independent attributes: each cell's
/// probability is the product of its categories' marginal probabilities.
pub fn joint_from_marginals(schema: &AttributeSchema, m: &MarginalSet) -> JointDistribution {
    let n = schema.cell_count();
    let mut probs = vec![1.0; n];
    for attr in 0..schema.attribute_count() {
        let marg = m.attribute(attr);
        for (cell, p) in probs.iter_mut().enumerate() {
            *p *= marg[schema.category_of_cell(attr, cell)];
        }
    }
    // A MarginalSet is always normalized, so the product sums to 1 already;
    // the constructor only guards against accumulated rounding.
    JointDistribution::new(schema, probs).expect("product of valid marginals is valid")
}

/// Recovers per-attribute marginals by summing the joint over all cells
/// sharing each category.
pub fn marginals_of_joint(schema: &AttributeSchema, j: &JointDistribution) -> MarginalSet {
    MarginalSet {
        vectors: raw_marginals(schema, j.probs()),
    }
}

/// Marginal vectors of an arbitrary (not necessarily normalized) cell vector.
pub(crate) fn raw_marginals(schema: &AttributeSchema, probs: &[f64]) -> Vec<Vec<f64>> {
    (0..schema.attribute_count())
        .map(|attr| {
            let mut v = vec![0.0; schema.category_count(attr)];
            for (cell, &p) in probs.iter().enumerate() {
                v[schema.category_of_cell(attr, cell)] += p;
            }
            v
        })
        .collect()
}

/// Maximum tolerated deviation of a raw converted attribute sum from 1, in
/// percent. Larger deviations signal mis-transcribed ratio data.
pub const RATIO_SUM_MAX_DEVIATION_PCT: f64 = 2.0;

/// Converts census-relative signed ratios into site marginals.
///
/// A positive ratio multiplies the census proportion (overrepresentation); a
/// negative ratio divides by its magnitude (underrepresentation). Each
/// attribute vector is then renormalized, absorbing the rounding the ratios
/// carry; a raw sum deviating from 1 by more than
/// [`RATIO_SUM_MAX_DEVIATION_PCT`] is rejected.
pub fn ratio_table_to_marginals(
    schema: &AttributeSchema,
    census: &MarginalSet,
    ratios: &[Vec<f64>],
) -> Result<MarginalSet> {
    if ratios.len() != schema.attribute_count() {
        return Err(CoreError::DimensionMismatch {
            expected: schema.attribute_count(),
            got: ratios.len(),
            context: "ratio vectors".into(),
        });
    }
    let mut vectors = Vec::with_capacity(ratios.len());
    for (attr, ratio_vec) in ratios.iter().enumerate() {
        let attr_meta = &schema.attributes()[attr];
        if ratio_vec.len() != schema.category_count(attr) {
            return Err(CoreError::DimensionMismatch {
                expected: schema.category_count(attr),
                got: ratio_vec.len(),
                context: format!("ratios for {}", attr_meta.name),
            });
        }
        let mut v = Vec::with_capacity(ratio_vec.len());
        for (cat, (&c, &r)) in census.attribute(attr).iter().zip(ratio_vec).enumerate() {
            if r == 0.0 {
                return Err(CoreError::ZeroRatio {
                    attribute: attr_meta.name.clone(),
                    category: attr_meta.categories[cat].clone(),
                });
            }
            v.push(if r > 0.0 { c * r } else { c / r.abs() });
        }
        let raw_sum: f64 = v.iter().sum();
        if (raw_sum - 1.0).abs() > RATIO_SUM_MAX_DEVIATION_PCT / 100.0 {
            return Err(CoreError::RatioSumOutOfRange {
                attribute: attr_meta.name.clone(),
                sum: raw_sum,
                max_dev: RATIO_SUM_MAX_DEVIATION_PCT,
            });
        }
        vectors.push(v);
    }
    MarginalSet::new(schema, vectors)
}

/// Drops excluded labels from raw category counts and normalizes the rest.
/// The output preserves the input order of the surviving categories.
pub fn clean_counts_to_distribution(raw: &[(String, f64)]) -> Result<Vec<f64>> {
    let kept: Vec<f64> = raw
        .iter()
        .filter(|(label, _)| !EXCLUDED_LABELS.contains(&label.as_str()))
        .map(|&(_, count)| count)
        .collect();
    if kept.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(CoreError::InvalidDistribution(
            "negative or non-finite count".into(),
        ));
    }
    let sum: f64 = kept.iter().sum();
    if kept.is_empty() || sum <= 0.0 {
        return Err(CoreError::AllMassExcluded);
    }
    Ok(kept.iter().map(|c| c / sum).collect())
}

/// Share of the 15-19 five-year bin assigned to the 0-17 output bin; the
/// remainder goes to 18-44.
pub const SPLIT_BIN_SHARE_UNDER_18: f64 = 0.6;

/// Aggregates five-year age-bin counts into the four-bin age marginal.
///
/// Bins are identified by their lower bound, parsed from labels like
/// `"15-19"` or `"85+"`. The 15-19 bin straddles the 0-17 / 18-44 boundary
/// and is split 60/40 between them; every other bin falls wholly inside one
/// output bin.
pub fn redistribute_age_bin(bin_counts: &[(String, f64)]) -> Result<Vec<f64>> {
    let mut out = [0.0_f64; 4];
    let mut saw_split_bin = false;
    for (row, (name, count)) in bin_counts.iter().enumerate() {
        let count = *count;
        if count < 0.0 || !count.is_finite() {
            return Err(CoreError::MalformedInput {
                row,
                message: format!("invalid count {count} for bin {name}"),
            });
        }
        let lower: u32 = name
            .trim_end_matches('+')
            .split('-')
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|_| CoreError::MalformedInput {
                row,
                message: format!("unparseable age bin label {name:?}"),
            })?;
        match lower {
            15 => {
                saw_split_bin = true;
                out[0] += SPLIT_BIN_SHARE_UNDER_18 * count;
                out[1] += (1.0 - SPLIT_BIN_SHARE_UNDER_18) * count;
            }
            0..=14 => out[0] += count,
            16..=44 => out[1] += count,
            45..=64 => out[2] += count,
            _ => out[3] += count,
        }
    }
    if !saw_split_bin {
        return Err(CoreError::MalformedInput {
            row: 0,
            message: "input carries no 15-19 bin".into(),
        });
    }
    let mut v = out.to_vec();
    normalize_in_place(&mut v, "age marginal")?;
    Ok(v)
}

/// Reweights a demographic distribution by per-cell participation rates to
/// produce a response distribution: `probs[i] ∝ demographic[i] * rates[i]`.
pub fn apply_participation_rates(
    schema: &AttributeSchema,
    demographic: &JointDistribution,
    rates: &[f64],
) -> Result<JointDistribution> {
    if rates.len() != demographic.len() {
        return Err(CoreError::DimensionMismatch {
            expected: demographic.len(),
            got: rates.len(),
            context: "participation rates".into(),
        });
    }
    if rates.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
        return Err(CoreError::InvalidParameter(
            "participation rates must be strictly positive".into(),
        ));
    }
    let probs: Vec<f64> = demographic
        .probs()
        .iter()
        .zip(rates)
        .map(|(&p, &r)| p * r)
        .collect();
    JointDistribution::new(schema, probs)
}
