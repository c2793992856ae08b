//! Per-worker accuracy/fairness audit and the unfair-worker sweeps.
//!
//! Workers are scored like any other predictor, over the tasks they labeled.
//! A worker is *unfair* at threshold `τ` when their fairness difference is
//! `>= τ`; workers whose fairness is not computable (all their tasks fall in
//! one group) are counted as fair and reported separately. A task is
//! *dominated* when its unfair labelers strictly outnumber its fair ones.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{
    report_from_observations, FairnessMetric, FairnessReport, MetricOptions, Observation,
};
use crate::model::{decide, AnnotationMatrix, TaskTable, WorkerId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerReport {
    pub worker_id: u64,
    #[serde(skip)]
    pub worker: WorkerId,
    pub n_labeled: usize,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub metric: &'static str,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Workers whose value for this metric is undefined.
    pub not_computable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerAudit {
    pub reports: Vec<WorkerReport>,
    pub histograms: Vec<Histogram>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub metric: MetricOptions,
    pub bins: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            metric: MetricOptions::default(),
            bins: 10,
        }
    }
}

fn worker_observations<'a>(
    matrix: &'a AnnotationMatrix,
    tasks: &'a TaskTable,
    worker: WorkerId,
) -> impl Iterator<Item = Observation> + 'a {
    matrix.worker_answers(worker).map(move |a| Observation {
        positive: if a.label { 1.0 } else { 0.0 },
        truth: tasks.truth()[a.task.0],
        group: tasks.groups()[a.task.0],
    })
}

fn check_alignment(matrix: &AnnotationMatrix, tasks: &TaskTable) -> Result<()> {
    if matrix.n_tasks() != tasks.len() {
        return Err(Error::InvalidInput(format!(
            "annotation matrix has {} tasks but task table has {}",
            matrix.n_tasks(),
            tasks.len()
        )));
    }
    Ok(())
}

/// Report for one worker over the tasks they labeled.
pub fn worker_report(
    matrix: &AnnotationMatrix,
    tasks: &TaskTable,
    worker: WorkerId,
    opts: &MetricOptions,
) -> Result<WorkerReport> {
    check_alignment(matrix, tasks)?;
    let report = report_from_observations(worker_observations(matrix, tasks, worker), opts)?
        .with_group_names(tasks.group_names());
    Ok(WorkerReport {
        worker_id: matrix.worker_id(worker),
        worker,
        n_labeled: matrix.worker_label_count(worker),
        report,
    })
}

/// One report per worker plus histograms of accuracy, FPR, DP difference
/// and EO difference.
pub fn audit_workers(
    matrix: &AnnotationMatrix,
    tasks: &TaskTable,
    opts: &AuditOptions,
) -> Result<WorkerAudit> {
    check_alignment(matrix, tasks)?;
    tasks.require_truth("the worker audit")?;
    let reports = (0..matrix.n_workers())
        .into_par_iter()
        .map(|w| worker_report(matrix, tasks, WorkerId(w), &opts.metric))
        .collect::<Result<Vec<_>>>()?;
    let histograms = vec![
        histogram(
            "accuracy",
            reports.iter().map(|r| r.report.accuracy),
            opts.bins,
        ),
        histogram("fpr", reports.iter().map(|r| r.report.fpr), opts.bins),
        histogram(
            "dp_diff",
            reports.iter().map(|r| r.report.dp_diff),
            opts.bins,
        ),
        histogram(
            "eo_diff",
            reports.iter().map(|r| r.report.eo_diff),
            opts.bins,
        ),
    ];
    Ok(WorkerAudit {
        reports,
        histograms,
    })
}

/// Uniform bins over [0, 1]; the last bin is closed on the right.
pub fn histogram(
    metric: &'static str,
    values: impl IntoIterator<Item = Option<f64>>,
    bins: usize,
) -> Histogram {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    let mut not_computable = 0;
    for v in values {
        match v {
            Some(v) => {
                let idx = ((v * bins as f64).floor() as usize).min(bins - 1);
                counts[idx] += 1;
            }
            None => not_computable += 1,
        }
    }
    Histogram {
        metric,
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        counts,
        not_computable,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub lower: f64,
    pub upper: f64,
    pub n_workers: usize,
    pub n_labels: usize,
    pub dp_diff: Option<f64>,
    pub dp_ratio: Option<f64>,
    pub eo_diff: Option<f64>,
    pub eo_ratio: Option<f64>,
}

/// `[0.0, 0.1, ..., 1.0]`.
pub fn default_bucket_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Buckets workers by accuracy into `(edges[i], edges[i+1]]` (the first
/// bucket also takes its lower edge) and scores the pooled labels of each
/// bucket's members. Empty buckets have `None` metrics.
pub fn bucket_table(
    matrix: &AnnotationMatrix,
    tasks: &TaskTable,
    reports: &[WorkerReport],
    edges: &[f64],
    opts: &MetricOptions,
) -> Result<Vec<BucketRow>> {
    check_alignment(matrix, tasks)?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "bucket edges must be at least two strictly increasing values".into(),
        ));
    }
    let mut members: Vec<Vec<WorkerId>> = vec![Vec::new(); edges.len() - 1];
    for r in reports {
        let Some(acc) = r.report.accuracy else {
            continue;
        };
        let bucket = (0..edges.len() - 1).find(|&b| {
            let lower_ok = if b == 0 {
                acc >= edges[0]
            } else {
                acc > edges[b]
            };
            lower_ok && acc <= edges[b + 1]
        });
        if let Some(b) = bucket {
            members[b].push(r.worker);
        }
    }
    members
        .iter()
        .enumerate()
        .map(|(b, workers)| {
            let n_labels = workers.iter().map(|&w| matrix.worker_label_count(w)).sum();
            let pooled = if workers.is_empty() {
                None
            } else {
                Some(report_from_observations(
                    workers
                        .iter()
                        .flat_map(|&w| worker_observations(matrix, tasks, w)),
                    opts,
                )?)
            };
            let field = |f: fn(&FairnessReport) -> Option<f64>| pooled.as_ref().and_then(f);
            Ok(BucketRow {
                lower: edges[b],
                upper: edges[b + 1],
                n_workers: workers.len(),
                n_labels,
                dp_diff: field(|r| r.dp_diff),
                dp_ratio: field(|r| r.dp_ratio),
                eo_diff: field(|r| r.eo_diff),
                eo_ratio: field(|r| r.eo_ratio),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub n_unfair_workers: usize,
    /// Workers with undefined fairness, counted as fair.
    pub n_not_computable: usize,
    pub dominated_fraction: f64,
    /// Majority-vote accuracy over still-answered tasks after removing the
    /// unfair workers; `None` when no task is left.
    pub acc_after_removal: Option<f64>,
    pub tasks_remaining: Option<usize>,
}

/// `{0.0, 0.1, ..., 1.0}`.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Indexed by dense worker id.
fn unfair_flags(
    n_workers: usize,
    reports: &[WorkerReport],
    metric: FairnessMetric,
    threshold: f64,
) -> (Vec<bool>, usize) {
    let mut unfair = vec![false; n_workers];
    let mut not_computable = 0;
    for r in reports {
        match r.report.metric(metric) {
            Some(v) => unfair[r.worker.0] = v >= threshold,
            None => not_computable += 1,
        }
    }
    (unfair, not_computable)
}

fn dominated_fraction(matrix: &AnnotationMatrix, unfair: &[bool]) -> f64 {
    let dominated = matrix
        .tasks()
        .filter(|&t| {
            let answers = matrix.task_answers(t);
            let bad = answers.iter().filter(|a| unfair[a.worker.0]).count();
            bad > answers.len() - bad
        })
        .count();
    dominated as f64 / matrix.n_tasks() as f64
}

/// Fraction of tasks dominated by unfair workers at every threshold.
pub fn domination_sweep(
    matrix: &AnnotationMatrix,
    reports: &[WorkerReport],
    metric: FairnessMetric,
    thresholds: &[f64],
) -> Vec<SweepRow> {
    thresholds
        .par_iter()
        .map(|&threshold| {
            let (unfair, n_not_computable) =
                unfair_flags(matrix.n_workers(), reports, metric, threshold);
            SweepRow {
                threshold,
                n_unfair_workers: unfair.iter().filter(|&&u| u).count(),
                n_not_computable,
                dominated_fraction: dominated_fraction(matrix, &unfair),
                acc_after_removal: None,
                tasks_remaining: None,
            }
        })
        .collect()
}

/// Majority vote restricted to the kept workers: accuracy over tasks that
/// still have a label, and how many such tasks there are.
fn vote_without(
    matrix: &AnnotationMatrix,
    truth: &[bool],
    removed: &[bool],
) -> (Option<f64>, usize) {
    let (mut answered, mut correct) = (0usize, 0usize);
    for t in matrix.tasks() {
        let (pos, n) = matrix
            .task_answers(t)
            .iter()
            .filter(|a| !removed[a.worker.0])
            .fold((0usize, 0usize), |(p, n), a| (p + a.label as usize, n + 1));
        if n == 0 {
            continue;
        }
        answered += 1;
        correct += (decide(pos as f64 / n as f64) == truth[t.0]) as usize;
    }
    let acc = (answered > 0).then(|| correct as f64 / answered as f64);
    (acc, answered)
}

/// Removes the unfair workers at every threshold and re-runs majority vote.
pub fn removal_impact(
    matrix: &AnnotationMatrix,
    tasks: &TaskTable,
    reports: &[WorkerReport],
    metric: FairnessMetric,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    check_alignment(matrix, tasks)?;
    let truth = tasks.require_truth("the removal sweep")?;
    Ok(thresholds
        .par_iter()
        .map(|&threshold| {
            let (unfair, n_not_computable) =
                unfair_flags(matrix.n_workers(), reports, metric, threshold);
            let (acc, remaining) = vote_without(matrix, &truth, &unfair);
            SweepRow {
                threshold,
                n_unfair_workers: unfair.iter().filter(|&&u| u).count(),
                n_not_computable,
                dominated_fraction: dominated_fraction(matrix, &unfair),
                acc_after_removal: acc,
                tasks_remaining: Some(remaining),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_annotation_matrix;

    fn fixture() -> (AnnotationMatrix, TaskTable) {
        // worker 0 copies truth; worker 1 says 1 on everything;
        // worker 2 labels group a only.
        let truth = [1u8, 0, 1, 0, 1, 0];
        let groups = ["a", "a", "a", "b", "b", "b"];
        let mut rows = Vec::new();
        for t in 0..6u64 {
            rows.push((t, 0, truth[t as usize]));
            rows.push((t, 1, 1));
            if t < 3 {
                rows.push((t, 2, 1 - truth[t as usize]));
            }
        }
        let m = build_annotation_matrix(&rows).unwrap();
        let tasks = TaskTable::new(
            groups.iter().map(|g| g.to_string()).collect(),
            truth.iter().map(|&y| Some(y == 1)).collect(),
            None,
        )
        .unwrap();
        (m, tasks)
    }

    #[test]
    fn truthful_worker_is_accurate_and_fair_in_eo() {
        let (m, tasks) = fixture();
        let audit = audit_workers(&m, &tasks, &AuditOptions::default()).unwrap();
        let r0 = &audit.reports[0].report;
        assert_eq!(r0.accuracy, Some(1.0));
        assert_eq!(r0.eo_diff, Some(0.0));
        assert_eq!(audit.reports[0].n_labeled, 6);
    }

    #[test]
    fn single_group_worker_is_flagged() {
        let (m, tasks) = fixture();
        let audit = audit_workers(&m, &tasks, &AuditOptions::default()).unwrap();
        assert!(!audit.reports[2].report.fairness_computable());
        let dp = audit
            .histograms
            .iter()
            .find(|h| h.metric == "dp_diff")
            .unwrap();
        assert_eq!(dp.not_computable, 1);
        assert_eq!(dp.counts.iter().sum::<usize>(), 2);
    }

    #[test]
    fn audit_requires_truth() {
        let (m, _) = fixture();
        let tasks = TaskTable::new(vec!["a".into(); 6], vec![None; 6], None).unwrap();
        assert!(matches!(
            audit_workers(&m, &tasks, &AuditOptions::default()),
            Err(Error::MissingTruth(_))
        ));
    }

    #[test]
    fn histogram_binning_edges() {
        let h = histogram(
            "x",
            [Some(0.0), Some(0.05), Some(1.0), Some(0.95), None],
            10,
        );
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[9], 2);
        assert_eq!(h.not_computable, 1);
        assert_eq!(h.edges.len(), 11);
    }

    #[test]
    fn single_member_bucket_matches_worker() {
        let (m, tasks) = fixture();
        let audit = audit_workers(&m, &tasks, &AuditOptions::default()).unwrap();
        let table = bucket_table(
            &m,
            &tasks,
            &audit.reports,
            &default_bucket_edges(),
            &MetricOptions::default(),
        )
        .unwrap();
        let top = table.last().unwrap();
        assert_eq!(top.n_workers, 1);
        assert_eq!(top.dp_diff, audit.reports[0].report.dp_diff);
        assert_eq!(top.eo_diff, audit.reports[0].report.eo_diff);
        let empty = &table[3];
        assert_eq!(empty.n_workers, 0);
        assert_eq!(empty.dp_diff, None);
    }

    #[test]
    fn sweep_boundaries() {
        let (m, tasks) = fixture();
        let audit = audit_workers(&m, &tasks, &AuditOptions::default()).unwrap();
        let rows = domination_sweep(&m, &audit.reports, FairnessMetric::DpDiff, &[0.0, 1.1]);
        // worker 2 is not computable and so counted as fair; on tasks 0..3 the
        // two computable workers outnumber it.
        assert_eq!(rows[0].dominated_fraction, 1.0);
        assert_eq!(rows[1].dominated_fraction, 0.0);

        let removal = removal_impact(
            &m,
            &tasks,
            &audit.reports,
            FairnessMetric::DpDiff,
            &[0.0, 1.1],
        )
        .unwrap();
        assert_eq!(removal[1].tasks_remaining, Some(6));
        // only worker 2 survives at threshold 0, covering tasks 0..3
        assert_eq!(removal[0].tasks_remaining, Some(3));
        assert_eq!(removal[0].acc_after_removal, Some(0.0));
    }
}
