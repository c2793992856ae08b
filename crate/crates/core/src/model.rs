//! Shared data model: tasks, workers, the sparse answer matrix, per-task
//! attributes and the output of a truth-discovery run.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Posterior at or above this value is decided as the positive class.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Global tie rule: a posterior of exactly 0.5 resolves to the positive class.
#[inline]
pub fn decide(posterior: f64) -> bool {
    posterior >= DECISION_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub task: TaskId,
    pub worker: WorkerId,
    pub label: bool,
}

/// Sparse worker x task matrix of binary answers.
///
/// Entries are stored sorted by `(task, worker)` so the answers for one task
/// are a contiguous slice. A second index gives each worker's entries.
/// Dense ids are assigned in ascending order of the external ids, which makes
/// construction insensitive to input row order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    entries: Vec<Annotation>,
    task_offsets: Vec<usize>,
    worker_offsets: Vec<usize>,
    worker_entries: Vec<usize>,
    task_ids: Vec<u64>,
    worker_ids: Vec<u64>,
}

/// Builds a matrix from external `(task, worker, label)` rows.
pub fn build_annotation_matrix(rows: &[(u64, u64, u8)]) -> Result<AnnotationMatrix> {
    AnnotationMatrix::from_rows(rows)
}

impl AnnotationMatrix {
    pub fn from_rows(rows: &[(u64, u64, u8)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Ingest("annotation row list is empty".into()));
        }
        let mut pairs: BTreeMap<(u64, u64), bool> = BTreeMap::new();
        for &(task, worker, label) in rows {
            let label = match label {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Ingest(format!(
                        "label {other} for (task {task}, worker {worker}) is not binary"
                    )))
                }
            };
            if let Some(prev) = pairs.insert((task, worker), label) {
                if prev != label {
                    return Err(Error::Ingest(format!(
                        "conflicting duplicate labels for (task {task}, worker {worker})"
                    )));
                }
            }
        }
        let mut task_ids: Vec<u64> = pairs.keys().map(|&(t, _)| t).collect();
        task_ids.dedup();
        let mut worker_ids: Vec<u64> = pairs.keys().map(|&(_, w)| w).collect();
        worker_ids.sort_unstable();
        worker_ids.dedup();

        let entries = pairs
            .into_iter()
            .map(|((t, w), label)| Annotation {
                task: TaskId(task_ids.binary_search(&t).expect("task id present")),
                worker: WorkerId(worker_ids.binary_search(&w).expect("worker id present")),
                label,
            })
            .collect();
        Self::assemble(task_ids, worker_ids, entries)
    }

    /// Builds a matrix whose dense ids are also its external ids.
    pub fn from_dense(n_tasks: usize, n_workers: usize, entries: Vec<Annotation>) -> Result<Self> {
        if let Some(bad) = entries
            .iter()
            .find(|a| a.task.0 >= n_tasks || a.worker.0 >= n_workers)
        {
            return Err(Error::Ingest(format!(
                "entry (task {}, worker {}) outside {n_tasks} x {n_workers}",
                bad.task.0, bad.worker.0
            )));
        }
        let mut entries = entries;
        entries.sort_by_key(|a| (a.task, a.worker));
        for pair in entries.windows(2) {
            if pair[0].task == pair[1].task && pair[0].worker == pair[1].worker {
                return Err(Error::Ingest(format!(
                    "duplicate entry for (task {}, worker {})",
                    pair[0].task.0, pair[0].worker.0
                )));
            }
        }
        Self::assemble(
            (0..n_tasks as u64).collect(),
            (0..n_workers as u64).collect(),
            entries,
        )
    }

    /// `entries` must already be sorted by (task, worker) and deduplicated.
    fn assemble(
        task_ids: Vec<u64>,
        worker_ids: Vec<u64>,
        entries: Vec<Annotation>,
    ) -> Result<Self> {
        let n_tasks = task_ids.len();
        let n_workers = worker_ids.len();

        let mut task_offsets = vec![0usize; n_tasks + 1];
        let mut worker_counts = vec![0usize; n_workers];
        for a in &entries {
            task_offsets[a.task.0 + 1] += 1;
            worker_counts[a.worker.0] += 1;
        }
        for t in 0..n_tasks {
            if task_offsets[t + 1] == 0 {
                return Err(Error::Ingest(format!("task {} has no labels", task_ids[t])));
            }
            task_offsets[t + 1] += task_offsets[t];
        }

        let mut worker_offsets = vec![0usize; n_workers + 1];
        for w in 0..n_workers {
            worker_offsets[w + 1] = worker_offsets[w] + worker_counts[w];
        }
        let mut cursor = worker_offsets.clone();
        let mut worker_entries = vec![0usize; entries.len()];
        for (idx, a) in entries.iter().enumerate() {
            worker_entries[cursor[a.worker.0]] = idx;
            cursor[a.worker.0] += 1;
        }

        Ok(Self {
            entries,
            task_offsets,
            worker_offsets,
            worker_entries,
            task_ids,
            worker_ids,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.task_ids.len()
    }

    pub fn n_workers(&self) -> usize {
        self.worker_ids.len()
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    /// The answer vector of one task (its row slice).
    pub fn task_answers(&self, task: TaskId) -> &[Annotation] {
        &self.entries[self.task_offsets[task.0]..self.task_offsets[task.0 + 1]]
    }

    pub fn worker_answers(&self, worker: WorkerId) -> impl Iterator<Item = &Annotation> + '_ {
        self.worker_entries[self.worker_offsets[worker.0]..self.worker_offsets[worker.0 + 1]]
            .iter()
            .map(move |&i| &self.entries[i])
    }

    pub fn worker_label_count(&self, worker: WorkerId) -> usize {
        self.worker_offsets[worker.0 + 1] - self.worker_offsets[worker.0]
    }

    pub fn task_label_count(&self, task: TaskId) -> usize {
        self.task_offsets[task.0 + 1] - self.task_offsets[task.0]
    }

    pub fn task_id(&self, task: TaskId) -> u64 {
        self.task_ids[task.0]
    }

    pub fn worker_id(&self, worker: WorkerId) -> u64 {
        self.worker_ids[worker.0]
    }

    pub fn task_ids(&self) -> &[u64] {
        &self.task_ids
    }

    pub fn worker_ids(&self) -> &[u64] {
        &self.worker_ids
    }

    pub fn task_index(&self, external: u64) -> Option<TaskId> {
        self.task_ids.binary_search(&external).ok().map(TaskId)
    }

    pub fn worker_index(&self, external: u64) -> Option<WorkerId> {
        self.worker_ids.binary_search(&external).ok().map(WorkerId)
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> {
        (0..self.n_tasks()).map(TaskId)
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> {
        (0..self.n_workers()).map(WorkerId)
    }

    /// Rows in external ids, sorted by (task, worker).
    pub fn to_rows(&self) -> Vec<(u64, u64, u8)> {
        self.entries
            .iter()
            .map(|a| {
                (
                    self.task_ids[a.task.0],
                    self.worker_ids[a.worker.0],
                    a.label as u8,
                )
            })
            .collect()
    }
}

/// Per-task attributes: sensitive group, optional truth, optional features.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTable {
    groups: Vec<usize>,
    group_names: Vec<String>,
    truth: Vec<Option<bool>>,
    features: Option<Vec<Vec<f64>>>,
}

impl TaskTable {
    /// Group names are mapped to dense ids in sorted order.
    pub fn new(
        groups: Vec<String>,
        truth: Vec<Option<bool>>,
        features: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let mut names: Vec<String> = groups.clone();
        names.sort();
        names.dedup();
        let ids = groups
            .iter()
            .map(|g| names.binary_search(g).expect("group present"))
            .collect();
        Self::from_group_ids(ids, names, truth, features)
    }

    pub fn from_group_ids(
        groups: Vec<usize>,
        group_names: Vec<String>,
        truth: Vec<Option<bool>>,
        features: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = groups.len();
        if truth.len() != n {
            return Err(Error::InvalidInput(format!(
                "truth column has {} entries for {n} tasks",
                truth.len()
            )));
        }
        if let Some(&bad) = groups.iter().find(|&&g| g >= group_names.len()) {
            return Err(Error::InvalidInput(format!("group id {bad} has no name")));
        }
        if let Some(features) = &features {
            if features.len() != n {
                return Err(Error::InvalidInput(format!(
                    "feature table has {} rows for {n} tasks",
                    features.len()
                )));
            }
            if let Some(first) = features.first() {
                let dim = first.len();
                if let Some(i) = features.iter().position(|f| f.len() != dim) {
                    return Err(Error::InvalidInput(format!(
                        "task {i} has {} features, expected {dim}",
                        features[i].len()
                    )));
                }
            }
        }
        Ok(Self {
            groups,
            group_names,
            truth,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn truth(&self) -> &[Option<bool>] {
        &self.truth
    }

    pub fn has_full_truth(&self) -> bool {
        self.truth.iter().all(Option::is_some)
    }

    /// Complete truth vector, or an error naming the operation that needed it.
    pub fn require_truth(&self, purpose: &'static str) -> Result<Vec<bool>> {
        self.truth
            .iter()
            .map(|t| t.ok_or(Error::MissingTruth(purpose)))
            .collect()
    }

    pub fn features(&self) -> Option<&[Vec<f64>]> {
        self.features.as_deref()
    }

    pub fn require_features(&self, purpose: &str) -> Result<&[Vec<f64>]> {
        self.features().ok_or_else(|| {
            Error::InvalidInput(format!(
                "{purpose} needs task features but none were loaded"
            ))
        })
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features
            .as_ref()
            .map(|f| f.first().map_or(0, Vec::len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mv,
    Ds,
    Lfc,
    FairTdPre,
    FairTdIn,
    FairTdPost,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Mv,
        Algorithm::Ds,
        Algorithm::Lfc,
        Algorithm::FairTdPre,
        Algorithm::FairTdIn,
        Algorithm::FairTdPost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mv => "mv",
            Algorithm::Ds => "ds",
            Algorithm::Lfc => "lfc",
            Algorithm::FairTdPre => "fair-td-pre",
            Algorithm::FairTdIn => "fair-td-in",
            Algorithm::FairTdPost => "fair-td-post",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Algorithm::Mv => "Majority Voting",
            Algorithm::Ds => "Dawid-Skene",
            Algorithm::Lfc => "Learning from Crowds",
            Algorithm::FairTdPre => "Fair-TD surrogate (pre-processing)",
            Algorithm::FairTdIn => "Fair-TD surrogate (in-processing)",
            Algorithm::FairTdPost => "Fair-TD surrogate (post-processing)",
        }
    }

    pub fn is_fairness_aware(self) -> bool {
        matches!(
            self,
            Algorithm::FairTdPre | Algorithm::FairTdIn | Algorithm::FairTdPost
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown algorithm {s:?} (expected one of mv, ds, lfc, fair-td-pre, fair-td-in, fair-td-post)"
                ))
            })
    }
}

/// Output of a truth-discovery run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdResult {
    pub algorithm: Algorithm,
    /// P(y = 1) per task.
    pub posteriors: Vec<f64>,
    pub labels: Vec<bool>,
    pub iterations: usize,
    /// Objective after every completed EM iteration; empty for one-shot methods.
    pub loglik_trace: Vec<f64>,
    pub final_loglik: Option<f64>,
    pub converged: bool,
    /// Fairness violation actually achieved, for constrained variants.
    pub achieved_violation: Option<f64>,
    pub notes: Vec<String>,
}

impl TdResult {
    /// Result of a non-iterative method; hard labels follow the tie rule.
    pub fn from_posteriors(algorithm: Algorithm, posteriors: Vec<f64>) -> Self {
        let labels = posteriors.iter().map(|&p| decide(p)).collect();
        Self {
            algorithm,
            posteriors,
            labels,
            iterations: 0,
            loglik_trace: Vec::new(),
            final_loglik: None,
            converged: true,
            achieved_violation: None,
            notes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_small_matrix() {
        let m = build_annotation_matrix(&[(0, 0, 1), (0, 1, 0), (1, 0, 1)]).unwrap();
        assert_eq!(m.n_tasks(), 2);
        assert_eq!(m.n_workers(), 2);
        assert_eq!(m.n_entries(), 3);
        assert_eq!(m.task_answers(TaskId(0)).len(), 2);
        assert_eq!(m.worker_label_count(WorkerId(0)), 2);
    }

    #[test]
    fn rejects_conflicting_duplicate() {
        let err = build_annotation_matrix(&[(0, 0, 1), (0, 0, 0)]).unwrap_err();
        assert!(err.to_string().contains("task 0, worker 0"), "{err}");
    }

    #[test]
    fn identical_duplicate_collapses() {
        let m = build_annotation_matrix(&[(0, 0, 1), (0, 0, 1)]).unwrap();
        assert_eq!(m.n_entries(), 1);
    }

    #[test]
    fn rejects_non_binary_and_empty() {
        assert!(build_annotation_matrix(&[(0, 0, 2)]).is_err());
        assert!(build_annotation_matrix(&[]).is_err());
    }

    #[test]
    fn sparse_external_ids_are_densified() {
        let m = build_annotation_matrix(&[(90, 7, 1), (12, 300, 0), (12, 7, 1)]).unwrap();
        assert_eq!(m.task_ids(), &[12, 90]);
        assert_eq!(m.worker_ids(), &[7, 300]);
        assert_eq!(m.task_index(90), Some(TaskId(1)));
        assert_eq!(m.worker_index(8), None);
        let again = AnnotationMatrix::from_rows(&m.to_rows()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn crowd_judgement_block_layout() {
        // 20 task blocks of 50, each labeled by its own group of 20 workers.
        let mut rows = Vec::new();
        for task in 0..1000u64 {
            let block = task / 50;
            for w in 0..20u64 {
                rows.push((task, block * 20 + w, ((task + w) % 2) as u8));
            }
        }
        let m = build_annotation_matrix(&rows).unwrap();
        assert_eq!(m.n_tasks(), 1000);
        assert_eq!(m.n_workers(), 400);
        assert!(m.tasks().all(|t| m.task_label_count(t) == 20));
        assert!(m.workers().all(|w| m.worker_label_count(w) == 50));
    }

    #[test]
    fn from_dense_rejects_task_without_labels() {
        let entries = vec![Annotation {
            task: TaskId(0),
            worker: WorkerId(0),
            label: true,
        }];
        assert!(AnnotationMatrix::from_dense(2, 1, entries).is_err());
    }

    #[test]
    fn task_table_validates_dimensions() {
        let ok = TaskTable::new(
            vec!["b".into(), "a".into()],
            vec![Some(true), None],
            Some(vec![vec![1.0, 2.0], vec![3.0, 4.0]]),
        )
        .unwrap();
        assert_eq!(ok.groups(), &[1, 0]);
        assert_eq!(ok.feature_dim(), Some(2));
        assert!(matches!(
            ok.require_truth("accuracy"),
            Err(Error::MissingTruth("accuracy"))
        ));

        let bad = TaskTable::new(
            vec!["a".into(), "a".into()],
            vec![None, None],
            Some(vec![vec![1.0], vec![1.0, 2.0]]),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn tie_resolves_positive() {
        let r = TdResult::from_posteriors(Algorithm::Mv, vec![0.5, 0.4999, 1.0]);
        assert_eq!(r.labels, vec![true, false, true]);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("glad".parse::<Algorithm>().is_err());
    }
}
