//! Accuracy and group-fairness metrics for any binary predictor.
//!
//! A predictor is anything that assigns a (possibly fractional) positive
//! prediction to a set of items: a single worker over the tasks they
//! labeled, a truth-discovery output, or a trained classifier on a test
//! split. Fractional predictions are used for randomized classifiers and are
//! treated as expected confusion-cell counts.
//!
//! Summaries over `k` groups:
//!
//! * `dp_diff` is the largest pairwise gap in positive-prediction rate and
//!   `dp_ratio` is the smallest rate divided by the largest.
//! * `eo_diff` is the larger of the largest TPR gap and the largest FPR gap;
//!   `eo_ratio` is the smaller of the two min/max ratios.
//! * A ratio with a zero maximum is 1 (every group identical), a zero
//!   minimum with a positive maximum gives 0.
//!
//! Groups with fewer than `min_support` predictions are left out of the
//! summaries and listed in `excluded_groups`. With fewer than two groups
//! left, the fairness fields are `None` (rendered as `NA`).

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub min_support: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { min_support: 1 }
    }
}

/// One prediction to be scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Probability mass on the positive prediction; 0 or 1 for hard predictors.
    pub positive: f64,
    pub truth: Option<bool>,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRates {
    pub group: String,
    pub support: usize,
    pub positive_rate: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub n_predictions: usize,
    pub n_with_truth: usize,
    pub accuracy: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub dp_diff: Option<f64>,
    pub dp_ratio: Option<f64>,
    pub eo_diff: Option<f64>,
    pub eo_ratio: Option<f64>,
    pub per_group: Vec<GroupRates>,
    pub excluded_groups: Vec<String>,
}

impl FairnessReport {
    /// Replaces numeric group labels with their names.
    pub fn with_group_names(mut self, names: &[String]) -> Self {
        let rename = |g: &mut String| {
            if let Some(name) = g.parse::<usize>().ok().and_then(|i| names.get(i)) {
                *g = name.clone();
            }
        };
        self.per_group.iter_mut().for_each(|r| rename(&mut r.group));
        self.excluded_groups.iter_mut().for_each(rename);
        self
    }

    pub fn fairness_computable(&self) -> bool {
        self.dp_diff.is_some()
    }

    /// Looks up a fairness summary by its report field name.
    pub fn metric(&self, metric: FairnessMetric) -> Option<f64> {
        match metric {
            FairnessMetric::DpDiff => self.dp_diff,
            FairnessMetric::EoDiff => self.eo_diff,
        }
    }
}

/// The two difference metrics used to classify workers as fair or unfair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessMetric {
    DpDiff,
    EoDiff,
}

impl FairnessMetric {
    pub fn name(self) -> &'static str {
        match self {
            FairnessMetric::DpDiff => "dp_diff",
            FairnessMetric::EoDiff => "eo_diff",
        }
    }
}

impl std::str::FromStr for FairnessMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" | "dp_diff" => Ok(FairnessMetric::DpDiff),
            "eo" | "eo_diff" => Ok(FairnessMetric::EoDiff),
            _ => Err(Error::InvalidInput(format!(
                "unknown fairness metric {s:?} (expected dp or eo)"
            ))),
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Cells {
    support: usize,
    predicted_pos: f64,
    actual_pos: usize,
    actual_neg: usize,
    true_pos: f64,
    false_pos: f64,
}

impl Cells {
    fn add(&mut self, obs: &Observation) {
        self.support += 1;
        self.predicted_pos += obs.positive;
        match obs.truth {
            Some(true) => {
                self.actual_pos += 1;
                self.true_pos += obs.positive;
            }
            Some(false) => {
                self.actual_neg += 1;
                self.false_pos += obs.positive;
            }
            None => {}
        }
    }

    fn merge(&mut self, other: &Cells) {
        self.support += other.support;
        self.predicted_pos += other.predicted_pos;
        self.actual_pos += other.actual_pos;
        self.actual_neg += other.actual_neg;
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
    }

    fn tpr(&self) -> Option<f64> {
        (self.actual_pos > 0).then(|| self.true_pos / self.actual_pos as f64)
    }

    fn fpr(&self) -> Option<f64> {
        (self.actual_neg > 0).then(|| self.false_pos / self.actual_neg as f64)
    }
}

/// min/max with the zero conventions described in the module docs.
pub fn rate_ratio(min: f64, max: f64) -> f64 {
    if max == 0.0 {
        1.0
    } else {
        min / max
    }
}

/// (max - min, min/max) over the values, or `None` for fewer than two.
fn gap_and_ratio(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    let mut count = 0usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        count += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (count >= 2).then(|| (hi - lo, rate_ratio(lo, hi)))
}

/// Scores an arbitrary multiset of observations.
pub fn report_from_observations<I>(observations: I, opts: &MetricOptions) -> Result<FairnessReport>
where
    I: IntoIterator<Item = Observation>,
{
    let mut groups: Vec<Cells> = Vec::new();
    for obs in observations {
        if !(0.0..=1.0).contains(&obs.positive) {
            return Err(Error::InvalidInput(format!(
                "prediction {} is outside [0, 1]",
                obs.positive
            )));
        }
        if obs.group >= groups.len() {
            groups.resize(obs.group + 1, Cells::default());
        }
        groups[obs.group].add(&obs);
    }

    let mut total = Cells::default();
    groups.iter().for_each(|g| total.merge(g));
    if total.support == 0 {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }

    let n_with_truth = total.actual_pos + total.actual_neg;
    let accuracy = (n_with_truth > 0).then(|| {
        (total.true_pos + (total.actual_neg as f64 - total.false_pos)) / n_with_truth as f64
    });
    let fpr = total.fpr();
    let fnr = total.tpr().map(|t| 1.0 - t);

    let min_support = opts.min_support.max(1);
    let mut per_group = Vec::new();
    let mut excluded_groups = Vec::new();
    let mut included = Vec::new();
    for (g, cells) in groups.iter().enumerate() {
        if cells.support == 0 {
            continue;
        }
        let excluded = cells.support < min_support;
        if excluded {
            excluded_groups.push(g.to_string());
        } else {
            included.push(*cells);
        }
        per_group.push(GroupRates {
            group: g.to_string(),
            support: cells.support,
            positive_rate: cells.predicted_pos / cells.support as f64,
            tpr: cells.tpr(),
            fpr: cells.fpr(),
            excluded,
        });
    }

    let dp = gap_and_ratio(included.iter().map(|c| c.predicted_pos / c.support as f64));
    let (eo_diff, eo_ratio) = if included.len() < 2 {
        (None, None)
    } else {
        let tpr = gap_and_ratio(included.iter().filter_map(Cells::tpr));
        let fpr = gap_and_ratio(included.iter().filter_map(Cells::fpr));
        match (tpr, fpr) {
            (Some((td, tr)), Some((fd, fr))) => (Some(td.max(fd)), Some(tr.min(fr))),
            (Some((d, r)), None) | (None, Some((d, r))) => (Some(d), Some(r)),
            (None, None) => (None, None),
        }
    };

    Ok(FairnessReport {
        n_predictions: total.support,
        n_with_truth,
        accuracy,
        fpr,
        fnr,
        dp_diff: dp.map(|(d, _)| d),
        dp_ratio: dp.map(|(_, r)| r),
        eo_diff,
        eo_ratio,
        per_group,
        excluded_groups,
    })
}

fn check_lengths(n_pred: usize, truth: &[Option<bool>], groups: &[usize]) -> Result<()> {
    if truth.len() != n_pred || groups.len() != n_pred {
        return Err(Error::InvalidInput(format!(
            "misaligned inputs: {} predictions, {} truths, {} groups",
            n_pred,
            truth.len(),
            groups.len()
        )));
    }
    Ok(())
}

/// Report over the tasks that have a prediction. Group names are the
/// numeric group ids until [`FairnessReport::with_group_names`] is applied.
pub fn fairness_report(
    predictions: &[Option<bool>],
    truth: &[Option<bool>],
    groups: &[usize],
    opts: &MetricOptions,
) -> Result<FairnessReport> {
    check_lengths(predictions.len(), truth, groups)?;
    report_from_observations(
        predictions
            .iter()
            .zip(truth)
            .zip(groups)
            .filter_map(|((p, &truth), &group)| {
                p.map(|p| Observation {
                    positive: if p { 1.0 } else { 0.0 },
                    truth,
                    group,
                })
            }),
        opts,
    )
}

/// Same as [`fairness_report`] for probabilistic predictions.
pub fn fairness_report_soft(
    probabilities: &[Option<f64>],
    truth: &[Option<bool>],
    groups: &[usize],
    opts: &MetricOptions,
) -> Result<FairnessReport> {
    check_lengths(probabilities.len(), truth, groups)?;
    report_from_observations(
        probabilities
            .iter()
            .zip(truth)
            .zip(groups)
            .filter_map(|((p, &truth), &group)| {
                p.map(|positive| Observation {
                    positive,
                    truth,
                    group,
                })
            }),
        opts,
    )
}

/// Convenience wrapper for fully-observed hard predictions.
pub fn evaluate(predictions: &[bool], truth: &[bool], groups: &[usize]) -> Result<FairnessReport> {
    let preds: Vec<Option<bool>> = predictions.iter().copied().map(Some).collect();
    let truth: Vec<Option<bool>> = truth.iter().copied().map(Some).collect();
    fairness_report(&preds, &truth, groups, &MetricOptions::default())
}

/// Fraction of agreeing tasks among tasks that have both a prediction and a
/// truth value.
pub fn accuracy(predictions: &[Option<bool>], truth: &[Option<bool>]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "misaligned inputs: {} predictions, {} truths",
            predictions.len(),
            truth.len()
        )));
    }
    let (agree, total) = predictions
        .iter()
        .zip(truth)
        .filter_map(|(p, t)| Some((*p)? == (*t)?))
        .fold((0usize, 0usize), |(a, n), hit| (a + hit as usize, n + 1));
    if total == 0 {
        return Err(Error::InvalidInput(
            "no task has both a prediction and a truth value".into(),
        ));
    }
    Ok(agree as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[u8]) -> Vec<Option<bool>> {
        v.iter().map(|&x| Some(x == 1)).collect()
    }

    #[test]
    fn dp_gap_and_ratio_from_rates() {
        // group 0: 4/5 positive, group 1: 2/5 positive
        let pred = some(&[1, 1, 1, 1, 0, 1, 1, 0, 0, 0]);
        let truth = vec![None; 10];
        let groups = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let r = fairness_report(&pred, &truth, &groups, &MetricOptions::default()).unwrap();
        assert!((r.dp_diff.unwrap() - 0.4).abs() < 1e-12);
        assert!((r.dp_ratio.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r.accuracy, None);
        assert_eq!(r.eo_diff, None);
    }

    #[test]
    fn perfect_predictor_is_fair_in_eo() {
        let truth = some(&[1, 0, 1, 0, 1, 1, 0, 0]);
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let r = fairness_report(&truth, &truth, &groups, &MetricOptions::default()).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        assert_eq!(r.eo_diff, Some(0.0));
        assert_eq!(r.eo_ratio, Some(1.0));
        assert_eq!(r.fpr, Some(0.0));
        assert_eq!(r.fnr, Some(0.0));
    }

    #[test]
    fn single_group_is_not_computable() {
        let p = some(&[1, 0, 1]);
        let r = fairness_report(&p, &p, &[2, 2, 2], &MetricOptions::default()).unwrap();
        assert!(!r.fairness_computable());
        assert_eq!(r.dp_ratio, None);
        assert_eq!(r.eo_ratio, None);
        assert_eq!(r.accuracy, Some(1.0));
    }

    #[test]
    fn zero_rate_conventions() {
        let truth = vec![None; 4];
        let all_neg = some(&[0, 0, 0, 0]);
        let r =
            fairness_report(&all_neg, &truth, &[0, 0, 1, 1], &MetricOptions::default()).unwrap();
        assert_eq!(r.dp_ratio, Some(1.0));
        assert_eq!(r.dp_diff, Some(0.0));

        let one_sided = some(&[1, 0, 0, 0]);
        let r =
            fairness_report(&one_sided, &truth, &[0, 0, 1, 1], &MetricOptions::default()).unwrap();
        assert_eq!(r.dp_ratio, Some(0.0));
        assert_eq!(r.dp_diff, Some(0.5));
    }

    #[test]
    fn min_support_excludes_small_groups() {
        let p = some(&[1, 1, 0, 0, 1]);
        let truth = vec![None; 5];
        let opts = MetricOptions { min_support: 2 };
        let r = fairness_report(&p, &truth, &[0, 0, 1, 1, 2], &opts).unwrap();
        assert_eq!(r.excluded_groups, vec!["2".to_string()]);
        assert_eq!(r.dp_diff, Some(1.0));
        let r = r.with_group_names(&["a".into(), "b".into(), "c".into()]);
        assert_eq!(r.excluded_groups, vec!["c".to_string()]);
        assert_eq!(r.per_group[0].group, "a");
    }

    #[test]
    fn partial_predictions_only_cover_predicted_tasks() {
        let pred = vec![Some(true), None, Some(false), None];
        let truth = some(&[1, 1, 1, 0]);
        let r = fairness_report(&pred, &truth, &[0, 0, 1, 1], &MetricOptions::default()).unwrap();
        assert_eq!(r.n_predictions, 2);
        assert_eq!(r.accuracy, Some(0.5));
    }

    #[test]
    fn accuracy_edges() {
        assert_eq!(accuracy(&some(&[1, 0]), &some(&[1, 0])).unwrap(), 1.0);
        assert_eq!(accuracy(&some(&[1, 0]), &some(&[0, 1])).unwrap(), 0.0);
        assert!(accuracy(&[Some(true), None], &[None, Some(true)]).is_err());
    }

    #[test]
    fn rejects_empty_and_misaligned() {
        let opts = MetricOptions::default();
        assert!(fairness_report(&[None], &[None], &[0], &opts).is_err());
        assert!(fairness_report(&[Some(true)], &[], &[0], &opts).is_err());
    }

    #[test]
    fn eo_uses_larger_of_tpr_and_fpr_gap() {
        // group 0: TPR 1, FPR 0; group 1: TPR 0.5, FPR 0.5
        let truth = some(&[1, 1, 0, 0, 1, 1, 0, 0]);
        let pred = some(&[1, 1, 0, 0, 1, 0, 1, 0]);
        let r = fairness_report(
            &pred,
            &truth,
            &[0, 0, 0, 0, 1, 1, 1, 1],
            &MetricOptions::default(),
        )
        .unwrap();
        assert_eq!(r.eo_diff, Some(0.5));
        // TPR ratio 0.5, FPR ratio 0/0.5 = 0
        assert_eq!(r.eo_ratio, Some(0.0));
    }
}
