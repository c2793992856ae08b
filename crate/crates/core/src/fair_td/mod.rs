//! Fairness-aware truth discovery (surrogate).
//!
//! These are stand-ins built around the pre-, in- and post-processing split
//! for fair truth discovery; they are not a reimplementation of any
//! published fair-TD algorithm, and every result they produce says so in its
//! notes.
//!
//! * [`fair_td_pre`] scores every worker's unfairness against the
//!   majority-vote consensus, shrinks their vote weight accordingly and takes
//!   a weighted vote.
//! * [`fair_td_in`] runs Dawid-Skene and, after each E-step, shifts each
//!   group's posteriors by a logit offset so the hard labels meet the
//!   demographic-parity budget.
//! * [`fair_td_post`] picks one decision threshold per group over the
//!   observed posteriors, flipping as few labels as possible.
//!
//! The budget `epsilon` bounds the output's `dp_diff` (or `eo_diff`).
//! At `epsilon >= 1` every variant returns its unconstrained counterpart.

pub mod threshold;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logistic::sigmoid;
use crate::metrics::{report_from_observations, MetricOptions, Observation};
use crate::model::{decide, Algorithm, AnnotationMatrix, TdResult};
use crate::truth::{majority_vote, weighted_majority_vote, DawidSkene, DsFit, EmConfig};
use threshold::{solve_odds, solve_parity, GroupThresholds, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Dp,
    Eo,
}

impl std::str::FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(ConstraintKind::Dp),
            "eo" => Ok(ConstraintKind::Eo),
            _ => Err(Error::InvalidInput(format!(
                "unknown fairness kind {s:?} (expected dp or eo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessConstraint {
    pub kind: ConstraintKind,
    /// Allowed value of the corresponding difference metric.
    pub epsilon: f64,
}

impl FairnessConstraint {
    pub fn dp(epsilon: f64) -> Self {
        Self {
            kind: ConstraintKind::Dp,
            epsilon,
        }
    }

    pub fn eo(epsilon: f64) -> Self {
        Self {
            kind: ConstraintKind::Eo,
            epsilon,
        }
    }

    /// Differences never exceed 1, so such a budget never binds.
    pub fn is_inactive(&self) -> bool {
        self.epsilon >= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Config(vec![format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )]));
        }
        Ok(())
    }
}

const SURROGATE_NOTE: &str =
    "fairness-aware truth discovery surrogate; not an exact reproduction of a published method";

fn check_groups(n_tasks: usize, groups: &[usize]) -> Result<()> {
    if groups.len() != n_tasks {
        return Err(Error::InvalidInput(format!(
            "{} group entries for {n_tasks} tasks",
            groups.len()
        )));
    }
    Ok(())
}

/// Spread of positive rates across groups (the output's `dp_diff`, 0 when
/// fewer than two groups are present).
pub fn parity_gap(labels: &[bool], groups: &[usize]) -> f64 {
    report_from_observations(
        labels.iter().zip(groups).map(|(&l, &group)| Observation {
            positive: if l { 1.0 } else { 0.0 },
            truth: None,
            group,
        }),
        &MetricOptions::default(),
    )
    .ok()
    .and_then(|r| r.dp_diff)
    .unwrap_or(0.0)
}

fn odds_gap(labels: &[bool], truth: &[bool], groups: &[usize]) -> f64 {
    report_from_observations(
        labels
            .iter()
            .zip(truth)
            .zip(groups)
            .map(|((&l, &t), &group)| Observation {
                positive: if l { 1.0 } else { 0.0 },
                truth: Some(t),
                group,
            }),
        &MetricOptions::default(),
    )
    .ok()
    .and_then(|r| r.eo_diff)
    .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweightedVote {
    pub result: TdResult,
    /// Estimated unfairness per worker (`None` when their tasks span a single
    /// group; such workers keep full weight).
    pub unfairness: Vec<Option<f64>>,
    pub weights: Vec<f64>,
}

/// Weight for a worker with unfairness `u` under budget `epsilon`:
/// `max(0, 1 - u / s)` with scale `s = epsilon / (1 - epsilon)`, so the
/// weight is 1 for fair workers and for any `epsilon >= 1`, and 0 for any
/// unfair worker at `epsilon = 0`.
pub fn worker_weight(unfairness: f64, epsilon: f64) -> f64 {
    if unfairness <= 0.0 || epsilon >= 1.0 {
        return 1.0;
    }
    let scale = epsilon / (1.0 - epsilon);
    if scale <= 0.0 {
        0.0
    } else {
        (1.0 - unfairness / scale).max(0.0)
    }
}

/// Pre-processing: down-weight workers whose labels look unfair against the
/// majority-vote consensus, then take a weighted vote.
pub fn fair_td_pre(
    matrix: &AnnotationMatrix,
    groups: &[usize],
    constraint: &FairnessConstraint,
) -> Result<ReweightedVote> {
    constraint.validate()?;
    check_groups(matrix.n_tasks(), groups)?;
    let consensus = majority_vote(matrix).labels;
    let opts = MetricOptions::default();

    let unfairness: Vec<Option<f64>> = matrix
        .workers()
        .map(|w| {
            let report = report_from_observations(
                matrix.worker_answers(w).map(|a| Observation {
                    positive: if a.label { 1.0 } else { 0.0 },
                    truth: Some(consensus[a.task.0]),
                    group: groups[a.task.0],
                }),
                &opts,
            )?;
            Ok(match constraint.kind {
                ConstraintKind::Dp => report.dp_diff,
                ConstraintKind::Eo => report.eo_diff,
            })
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = unfairness
        .iter()
        .map(|u| worker_weight(u.unwrap_or(0.0), constraint.epsilon))
        .collect();

    let mut result = weighted_majority_vote(matrix, &weights, Algorithm::FairTdPre).result;
    result.achieved_violation = Some(match constraint.kind {
        ConstraintKind::Dp => parity_gap(&result.labels, groups),
        ConstraintKind::Eo => odds_gap(&result.labels, &consensus, groups),
    });
    result.notes.insert(0, SURROGATE_NOTE.to_string());
    if constraint.kind == ConstraintKind::Eo {
        result
            .notes
            .push("achieved violation measured against the majority-vote consensus".into());
    }
    Ok(ReweightedVote {
        result,
        unfairness,
        weights,
    })
}

fn group_members(groups: &[usize]) -> Vec<Vec<usize>> {
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let mut members = vec![Vec::new(); n_groups];
    for (i, &g) in groups.iter().enumerate() {
        members[g].push(i);
    }
    members.retain(|m| !m.is_empty());
    members
}

/// Just below 0.5, so it decides negative under the tie rule.
const BELOW_HALF: f64 = 0.499_999_999_999_999_94;

/// Monotone map sending `threshold` to 0.5, so that the tie rule on the
/// mapped posterior reproduces `posterior >= threshold`.
fn recenter(posterior: f64, threshold: f64) -> f64 {
    if threshold.is_infinite() {
        return (0.5 * posterior).min(BELOW_HALF);
    }
    if posterior >= threshold {
        if threshold >= 1.0 {
            1.0
        } else {
            0.5 + 0.5 * (posterior - threshold) / (1.0 - threshold)
        }
    } else {
        (0.5 * posterior / threshold).min(BELOW_HALF)
    }
}

/// Post-processing: per-group thresholds over the posteriors of `td`.
///
/// For DP the search is exact: it returns a minimum-flip labeling with
/// `dp_diff <= epsilon` (one always exists, labeling nobody positive) and,
/// among those, one with the smallest achieved gap. EO needs ground truth
/// and uses exhaustive search on small instances, greedy search otherwise;
/// when the budget cannot be met the closest labeling found is returned
/// with its achieved violation.
pub fn fair_td_post(
    td: &TdResult,
    groups: &[usize],
    constraint: &FairnessConstraint,
    truth: Option<&[bool]>,
) -> Result<TdResult> {
    constraint.validate()?;
    check_groups(td.len(), groups)?;
    if let Some(t) = truth {
        if t.len() != td.len() {
            return Err(Error::InvalidInput(format!(
                "{} truth values for {} tasks",
                t.len(),
                td.len()
            )));
        }
    }
    let members = group_members(groups);
    let (truth_for_search, kind) = match constraint.kind {
        ConstraintKind::Dp => (None, ConstraintKind::Dp),
        ConstraintKind::Eo => (
            Some(truth.ok_or(Error::MissingTruth("equalized-odds post-processing"))?),
            ConstraintKind::Eo,
        ),
    };
    let tables: Vec<GroupThresholds> = members
        .into_iter()
        .map(|tasks| GroupThresholds::new(tasks, &td.posteriors, truth_for_search))
        .collect();
    let selection = match kind {
        ConstraintKind::Dp => solve_parity(&tables, constraint.epsilon),
        ConstraintKind::Eo => solve_odds(&tables, constraint.epsilon),
    };

    let mut out = apply_selection(td, &tables, &selection);
    out.algorithm = Algorithm::FairTdPost;
    out.achieved_violation = Some(match kind {
        ConstraintKind::Dp => parity_gap(&out.labels, groups),
        ConstraintKind::Eo => odds_gap(&out.labels, truth_for_search.expect("eo"), groups),
    });
    out.notes.insert(0, SURROGATE_NOTE.to_string());
    if out.achieved_violation.unwrap_or(0.0) > constraint.epsilon + 1e-12 {
        out.notes.push(format!(
            "budget {} not reachable on the threshold grid; closest achievable labeling returned",
            constraint.epsilon
        ));
    }
    if selection.cost.flips > 0 {
        out.notes.push(format!(
            "{} label(s) flipped by per-group thresholds",
            selection.cost.flips
        ));
    }
    Ok(out)
}

/// Groups whose labeling is unchanged keep their posteriors as they were.
fn apply_selection(td: &TdResult, tables: &[GroupThresholds], selection: &Selection) -> TdResult {
    let mut out = td.clone();
    for (table, &idx) in tables.iter().zip(&selection.choice) {
        if idx == table.baseline {
            continue;
        }
        let threshold = table.candidates[idx].threshold;
        for &i in &table.tasks {
            out.posteriors[i] = recenter(td.posteriors[i], threshold);
            out.labels[i] = decide(out.posteriors[i]);
            debug_assert_eq!(out.labels[i], td.posteriors[i] >= threshold);
        }
    }
    out
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    (p / (1.0 - p)).ln()
}

/// Shifts the posteriors of `tasks` by a common logit offset, found by
/// bisection, so that exactly `target` of them decide positive.
fn shift_group(posteriors: &mut [f64], tasks: &[usize], target: usize) {
    let logits: Vec<f64> = tasks.iter().map(|&i| logit(posteriors[i])).collect();
    let count = |delta: f64| {
        logits
            .iter()
            .filter(|&&z| decide(sigmoid(z + delta)))
            .count()
    };
    let current = count(0.0);
    if current == target {
        return;
    }
    // count(delta) is non-decreasing in delta
    let (mut lo, mut hi) = if target > current {
        (0.0, 80.0)
    } else {
        (-80.0, 0.0)
    };
    let growing = target > current;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = count(mid);
        if growing {
            if c >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        } else if c <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = if growing { hi } else { lo };
    for (&i, &z) in tasks.iter().zip(&logits) {
        posteriors[i] = sigmoid(z + delta);
    }
}

/// In-processing: Dawid-Skene EM whose posteriors are projected after every
/// E-step onto the demographic-parity budget, using the minimum-flip
/// positive counts from the post-processing search.
pub fn fair_td_in(
    matrix: &AnnotationMatrix,
    groups: &[usize],
    constraint: &FairnessConstraint,
    cfg: &EmConfig,
) -> Result<DsFit> {
    constraint.validate()?;
    check_groups(matrix.n_tasks(), groups)?;
    if constraint.kind == ConstraintKind::Eo {
        return Err(Error::Unsupported(
            "in-processing supports the dp constraint only; equalized odds needs ground truth"
                .into(),
        ));
    }
    let members = group_members(groups);
    let epsilon = constraint.epsilon;
    let mut projections = 0usize;
    let project = |posteriors: &mut [f64]| {
        let labels: Vec<bool> = posteriors.iter().map(|&p| decide(p)).collect();
        if parity_gap(&labels, groups) <= epsilon {
            return;
        }
        projections += 1;
        let tables: Vec<GroupThresholds> = members
            .iter()
            .map(|tasks| GroupThresholds::new(tasks.clone(), posteriors, None))
            .collect();
        let selection = solve_parity(&tables, epsilon);
        for (table, &idx) in tables.iter().zip(&selection.choice) {
            shift_group(posteriors, &table.tasks, table.candidates[idx].positives);
        }
    };
    let mut fit = DawidSkene::new(matrix, cfg)?.run_projected(Algorithm::FairTdIn, project);
    fit.result.achieved_violation = Some(parity_gap(&fit.result.labels, groups));
    fit.result.notes.insert(0, SURROGATE_NOTE.to_string());
    if projections > 0 {
        fit.result.notes.push(format!(
            "parity projection applied in {projections} iteration(s)"
        ));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_annotation_matrix;
    use crate::truth::dawid_skene;

    #[test]
    fn weight_schedule() {
        assert_eq!(worker_weight(0.0, 0.0), 1.0);
        assert_eq!(worker_weight(0.3, 0.0), 0.0);
        assert_eq!(worker_weight(0.9, 1.0), 1.0);
        assert_eq!(worker_weight(0.9, f64::INFINITY), 1.0);
        assert!((worker_weight(0.25, 0.5) - 0.75).abs() < 1e-15);
        assert!(worker_weight(0.4, 0.2) < worker_weight(0.4, 0.3));
    }

    #[test]
    fn recenter_preserves_decisions() {
        for &t in &[0.0, 0.1, 0.5, 0.77, 1.0, f64::INFINITY] {
            for &p in &[0.0, 0.05, 0.1, 0.49, 0.5, 0.77, 0.9, 1.0] {
                let q = recenter(p, t);
                assert!((0.0..=1.0).contains(&q));
                assert_eq!(decide(q), p >= t, "p={p} t={t}");
            }
        }
    }

    #[test]
    fn post_on_small_example_equalizes_rates() {
        // group A: .9 .9 .1, group B: .6 .4 .4; minimum-flip equal-rate
        // labelings flip 3 tasks either way, the confidence tie-break picks
        // "everyone positive".
        let td = TdResult::from_posteriors(Algorithm::Mv, vec![0.9, 0.9, 0.1, 0.6, 0.4, 0.4]);
        let groups = [0, 0, 0, 1, 1, 1];
        let out = fair_td_post(&td, &groups, &FairnessConstraint::dp(0.0), None).unwrap();
        assert_eq!(out.labels, vec![true; 6]);
        assert_eq!(out.achieved_violation, Some(0.0));
    }

    #[test]
    fn post_at_full_budget_is_identity() {
        let td = TdResult::from_posteriors(Algorithm::Ds, vec![0.9, 0.2, 0.7, 0.6, 0.4, 0.1]);
        let out =
            fair_td_post(&td, &[0, 0, 0, 1, 1, 1], &FairnessConstraint::dp(1.0), None).unwrap();
        assert_eq!(out.labels, td.labels);
        assert_eq!(out.posteriors, td.posteriors);
    }

    #[test]
    fn post_eo_requires_truth() {
        let td = TdResult::from_posteriors(Algorithm::Mv, vec![0.9, 0.1]);
        let err = fair_td_post(&td, &[0, 1], &FairnessConstraint::eo(0.1), None).unwrap_err();
        assert!(matches!(err, Error::MissingTruth(_)));
        let truth = [true, true];
        let out = fair_td_post(&td, &[0, 1], &FairnessConstraint::eo(0.0), Some(&truth)).unwrap();
        assert_eq!(out.achieved_violation, Some(0.0));
    }

    #[test]
    fn pre_with_fair_workers_is_majority_vote() {
        // each worker labels both groups identically, so their dp gap is 0
        let rows = [
            (0, 0, 1),
            (1, 0, 1),
            (0, 1, 0),
            (1, 1, 0),
            (0, 2, 1),
            (1, 2, 1),
        ];
        let m = build_annotation_matrix(&rows).unwrap();
        let out = fair_td_pre(&m, &[0, 1], &FairnessConstraint::dp(0.0)).unwrap();
        assert!(out.weights.iter().all(|&w| w == 1.0));
        assert_eq!(out.result.labels, majority_vote(&m).labels);
    }

    #[test]
    fn in_at_full_budget_matches_dawid_skene() {
        let rows = [
            (0, 0, 1),
            (0, 1, 1),
            (1, 0, 0),
            (1, 1, 1),
            (2, 0, 0),
            (2, 1, 0),
            (3, 0, 1),
            (3, 1, 0),
        ];
        let m = build_annotation_matrix(&rows).unwrap();
        let groups = [0, 0, 1, 1];
        let fit = fair_td_in(
            &m,
            &groups,
            &FairnessConstraint::dp(1.0),
            &EmConfig::default(),
        )
        .unwrap();
        let ds = dawid_skene(&m, &EmConfig::default()).unwrap();
        assert_eq!(fit.result.posteriors, ds.result.posteriors);
        assert_eq!(fit.result.labels, ds.result.labels);

        let tight = fair_td_in(
            &m,
            &groups,
            &FairnessConstraint::dp(0.0),
            &EmConfig::default(),
        )
        .unwrap();
        assert_eq!(tight.result.achieved_violation, Some(0.0));
        assert!(fair_td_in(
            &m,
            &groups,
            &FairnessConstraint::eo(0.1),
            &EmConfig::default()
        )
        .is_err());
    }

    #[test]
    fn negative_budget_rejected() {
        let td = TdResult::from_posteriors(Algorithm::Mv, vec![0.9]);
        assert!(fair_td_post(&td, &[0], &FairnessConstraint::dp(-0.1), None).is_err());
    }
}
