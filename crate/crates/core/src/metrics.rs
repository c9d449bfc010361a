//! Representativeness distances between a cohort (or candidate mixture) and
//! the target population.
//!
//! Three measures are provided: the multivariate Kullback-Leibler divergence
//! over the joint cell space, the sum of univariate KL divergences over the
//! attribute marginals, and a normed sum of univariate Jensen-Shannon
//! distances. KL divergences are taken cohort-relative-to-target: the target
//! is strictly positive over all cells whenever it is built from strictly
//! positive marginals, so the divergence stays finite for any cohort,
//! including early ones with many empty cells.

use serde::{Deserialize, Serialize};

use crate::demographics::{marginals_of_joint, JointDistribution};
use crate::error::{CoreError, Result};
use crate::schema::AttributeSchema;

/// Logarithm base for KL divergences. Natural log is the default; the
/// Jensen-Shannon distances inside [`distance_summary`] always use base 2 so
/// each term lies in [0, 1] regardless of this setting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

impl LogBase {
    #[inline]
    pub(crate) fn scale(self) -> f64 {
        match self {
            LogBase::Nats => 1.0,
            LogBase::Bits => std::f64::consts::LN_2.recip(),
        }
    }
}

/// The distance function a policy minimizes and reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    #[default]
    MultivariateKld,
    UnivariateKldSum,
    DistanceSummary,
}

/// KL divergence `Σ q[i]·log(q[i]/p[i])` with the `0·log 0 = 0` convention.
///
/// Errors when `q` carries mass on a cell where `p` has none (the divergence
/// would be infinite) rather than returning a silent infinity.
pub fn kl_divergence(q: &[f64], p: &[f64], base: LogBase) -> Result<f64> {
    if q.len() != p.len() {
        return Err(CoreError::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
            context: "KL divergence operands".into(),
        });
    }
    let mut sum = 0.0;
    for (cell, (&qi, &pi)) in q.iter().zip(p).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(CoreError::UnmatchedSupport { cell, q: qi });
        }
        sum += qi * (qi / pi).ln();
    }
    // Tiny negative values can arise from rounding when q ≈ p.
    Ok((sum * base.scale()).max(0.0))
}

/// Sum of univariate KL divergences across the attribute marginals.
pub fn univariate_kld_sum(
    schema: &AttributeSchema,
    cohort: &JointDistribution,
    target: &JointDistribution,
    base: LogBase,
) -> Result<f64> {
    let cm = marginals_of_joint(schema, cohort);
    let tm = marginals_of_joint(schema, target);
    let mut sum = 0.0;
    for attr in 0..schema.attribute_count() {
        sum += kl_divergence(cm.attribute(attr), tm.attribute(attr), base)?;
    }
    Ok(sum)
}

/// Jensen-Shannon distance (square root of the base-2 Jensen-Shannon
/// divergence), bounded in [0, 1]. Defined for zeros on either side.
pub(crate) fn js_distance(q: &[f64], p: &[f64]) -> f64 {
    let mut div = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        let mi = 0.5 * (qi + pi);
        if qi > 0.0 {
            div += 0.5 * qi * (qi / mi).log2();
        }
        if pi > 0.0 {
            div += 0.5 * pi * (pi / mi).log2();
        }
    }
    div.max(0.0).sqrt()
}

/// Normed sum of univariate Jensen-Shannon distances across the attribute
/// marginals: the mean of the per-attribute distances, so the result lies in
/// [0, 1].
pub fn distance_summary(
    schema: &AttributeSchema,
    cohort: &JointDistribution,
    target: &JointDistribution,
) -> f64 {
    let cm = marginals_of_joint(schema, cohort);
    let tm = marginals_of_joint(schema, target);
    let n = schema.attribute_count() as f64;
    (0..schema.attribute_count())
        .map(|a| js_distance(cm.attribute(a), tm.attribute(a)))
        .sum::<f64>()
        / n
}

/// Dispatches to the selected distance measure.
pub fn evaluate(
    metric: DistanceMetric,
    schema: &AttributeSchema,
    cohort: &JointDistribution,
    target: &JointDistribution,
    base: LogBase,
) -> Result<f64> {
    match metric {
        DistanceMetric::MultivariateKld => kl_divergence(cohort.probs(), target.probs(), base),
        DistanceMetric::UnivariateKldSum => univariate_kld_sum(schema, cohort, target, base),
        DistanceMetric::DistanceSummary => Ok(distance_summary(schema, cohort, target)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demographics::{joint_from_marginals, MarginalSet};
    use approx::assert_abs_diff_eq;

    fn toy_schema() -> AttributeSchema {
        AttributeSchema::new(vec![
            ("a".into(), vec!["a0".into(), "a1".into()]),
            ("b".into(), vec!["b0".into(), "b1".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn kl_zero_on_identical() {
        let p = [0.3, 0.2, 0.5];
        assert_eq!(kl_divergence(&p, &p, LogBase::Nats).unwrap(), 0.0);
    }

    #[test]
    fn kl_two_term_hand_value() {
        let v = kl_divergence(&[0.5, 0.5], &[0.25, 0.75], LogBase::Nats).unwrap();
        assert_abs_diff_eq!(v, 0.14384, epsilon = 5e-6);
        let bits = kl_divergence(&[0.5, 0.5], &[0.25, 0.75], LogBase::Bits).unwrap();
        assert_abs_diff_eq!(bits, v / std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn kl_rejects_unmatched_support() {
        let err = kl_divergence(&[0.5, 0.5], &[1.0, 0.0], LogBase::Nats).unwrap_err();
        assert!(matches!(err, CoreError::UnmatchedSupport { cell: 1, .. }));
        // zero cohort mass on zero target mass is fine
        assert!(kl_divergence(&[1.0, 0.0], &[1.0, 0.0], LogBase::Nats).is_ok());
    }

    #[test]
    fn univariate_sum_isolates_differing_marginal() {
        let s = toy_schema();
        let target = joint_from_marginals(
            &s,
            &MarginalSet::new(&s, vec![vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap(),
        );
        let cohort = joint_from_marginals(
            &s,
            &MarginalSet::new(&s, vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
        );
        let v = univariate_kld_sum(&s, &cohort, &target, LogBase::Nats).unwrap();
        assert_abs_diff_eq!(v, 0.14384, epsilon = 5e-6);
        let same = univariate_kld_sum(&s, &target, &target, LogBase::Nats).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn chain_rule_for_product_joints() {
        let s = AttributeSchema::star_default();
        let q = MarginalSet::new(
            &s,
            vec![
                vec![0.3, 0.3, 0.2, 0.2],
                vec![0.6, 0.4],
                vec![0.1, 0.1, 0.2, 0.25, 0.35],
                vec![0.5, 0.5],
            ],
        )
        .unwrap();
        let p = MarginalSet::new(
            &s,
            vec![
                vec![0.25, 0.25, 0.25, 0.25],
                vec![0.5, 0.5],
                vec![0.2, 0.2, 0.2, 0.2, 0.2],
                vec![0.3, 0.7],
            ],
        )
        .unwrap();
        let qj = joint_from_marginals(&s, &q);
        let pj = joint_from_marginals(&s, &p);
        let joint_kl = kl_divergence(qj.probs(), pj.probs(), LogBase::Nats).unwrap();
        let marg_sum = univariate_kld_sum(&s, &qj, &pj, LogBase::Nats).unwrap();
        assert_abs_diff_eq!(joint_kl, marg_sum, epsilon = 1e-9);
    }

    #[test]
    fn distance_summary_bounds() {
        let s = toy_schema();
        let p = joint_from_marginals(
            &s,
            &MarginalSet::new(&s, vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
        );
        let q = joint_from_marginals(
            &s,
            &MarginalSet::new(&s, vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(),
        );
        // both marginal pairs disjoint: every term attains its maximum 1
        assert_abs_diff_eq!(distance_summary(&s, &q, &p), 1.0, epsilon = 1e-12);
        assert_eq!(distance_summary(&s, &p, &p), 0.0);

        // one maximal term, the other identical: (1 + 0) / 2
        let half = joint_from_marginals(
            &s,
            &MarginalSet::new(&s, vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        );
        assert_abs_diff_eq!(distance_summary(&s, &half, &p), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn one_maximal_term_of_four_gives_quarter() {
        let s = AttributeSchema::new(vec![
            ("w".into(), vec!["0".into(), "1".into()]),
            ("x".into(), vec!["0".into(), "1".into()]),
            ("y".into(), vec!["0".into(), "1".into()]),
            ("z".into(), vec!["0".into(), "1".into()]),
        ])
        .unwrap();
        let base = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5], vec![1.0, 0.0]];
        let mut flipped = base.clone();
        flipped[3] = vec![0.0, 1.0];
        let p = joint_from_marginals(&s, &MarginalSet::new(&s, base).unwrap());
        let q = joint_from_marginals(&s, &MarginalSet::new(&s, flipped).unwrap());
        assert_abs_diff_eq!(distance_summary(&s, &q, &p), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_dispatches() {
        let s = toy_schema();
        let p = joint_from_marginals(
            &s,
            &MarginalSet::new(&s, vec![vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap(),
        );
        let q = joint_from_marginals(
            &s,
            &MarginalSet::new(&s, vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
        );
        for metric in [
            DistanceMetric::MultivariateKld,
            DistanceMetric::UnivariateKldSum,
            DistanceMetric::DistanceSummary,
        ] {
            assert_eq!(evaluate(metric, &s, &p, &p, LogBase::Nats).unwrap(), 0.0);
        }
        let v = evaluate(
            DistanceMetric::UnivariateKldSum,
            &s,
            &q,
            &p,
            LogBase::Nats,
        )
        .unwrap();
        assert_abs_diff_eq!(v, 0.14384, epsilon = 5e-6);
    }
}
