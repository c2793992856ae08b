//! Classifiers trained on aggregated labels.
//!
//! [`delta_experiment`] measures what crowd consensus costs a downstream
//! model: the same logistic regression is trained once on ground truth and
//! once on truth-discovery labels, both are scored on a shared held-out split
//! against ground truth, and the differences (truth-trained minus
//! TD-trained) are averaged over repeated random splits.
//!
//! The two fair-ML baselines live in [`prejudice`] and [`expgrad`].

pub mod expgrad;
pub mod prejudice;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logistic::{soft_logloss, LogisticModel};
use crate::metrics::{evaluate, FairnessReport};
use crate::optim::{minimize, GdConfig};

pub use expgrad::{exponentiated_gradient, ExpGradConfig, ExpGradFit, RandomizedClassifier};
pub use prejudice::{prejudice_index, prejudice_remover, prejudice_remover_objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub learning_rate: f64,
    /// Recorded only: full-batch descent from zero is deterministic.
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_steps: 2000,
            grad_tol: 1e-6,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl LogisticConfig {
    pub(crate) fn gd(&self) -> GdConfig {
        GdConfig {
            learning_rate: self.learning_rate,
            max_steps: self.max_steps,
            grad_tol: self.grad_tol,
            growth: 1.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.l2 >= 0.0) {
            problems.push(format!("l2 must be >= 0, got {}", self.l2));
        }
        if !(self.learning_rate > 0.0) {
            problems.push(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.grad_tol >= 0.0) {
            problems.push(format!("grad_tol must be >= 0, got {}", self.grad_tol));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

pub(crate) fn check_training_set(features: &[Vec<f64>], labels: &[bool]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    if let Some(i) = features.iter().position(|x| x.len() != dim) {
        return Err(Error::InvalidInput(format!(
            "feature row {i} has {} values, expected {dim}",
            features[i].len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::InvalidInput(
            "training labels contain a single class; the decision boundary is undefined".into(),
        ));
    }
    Ok(dim)
}

pub(crate) fn targets(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect()
}

/// L2-regularized logistic regression by full-batch gradient descent from
/// zero. Needs both classes among `labels`.
pub fn train_logistic(
    features: &[Vec<f64>],
    labels: &[bool],
    cfg: &LogisticConfig,
) -> Result<LogisticModel> {
    train_logistic_weighted(features, labels, None, cfg)
}

/// Same with per-example weights (normalized by their sum).
pub fn train_logistic_weighted(
    features: &[Vec<f64>],
    labels: &[bool],
    sample_weights: Option<&[f64]>,
    cfg: &LogisticConfig,
) -> Result<LogisticModel> {
    cfg.validate()?;
    let dim = check_training_set(features, labels)?;
    if let Some(w) = sample_weights {
        if w.len() != labels.len() || w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidInput(
                "sample weights must be non-negative and aligned with the labels".into(),
            ));
        }
    }
    let y = targets(labels);
    let fit = minimize(
        |params, grad| soft_logloss(params, features, &y, sample_weights, cfg.l2, grad),
        vec![0.0; dim + 1],
        &cfg.gd(),
    );
    Ok(LogisticModel::from_params(&fit.params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeltaConfig {
    pub repeats: usize,
    /// Fraction of tasks used for training.
    pub split_fraction: f64,
    pub seed: u64,
    /// Attempts at drawing a usable split before giving up.
    pub max_attempts: usize,
    pub logistic: LogisticConfig,
}

impl Default for DeltaConfig {
    fn default() -> Self {
        Self {
            repeats: 10,
            split_fraction: 0.5,
            seed: 0,
            max_attempts: 20,
            logistic: LogisticConfig::default(),
        }
    }
}

/// Test-split metrics of both models in one repeat.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub attempts: usize,
    pub accuracy_truth: f64,
    pub accuracy_td: f64,
    pub dp_diff_truth: f64,
    pub dp_diff_td: f64,
    pub eo_diff_truth: f64,
    pub eo_diff_td: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    /// Mean accuracy difference, in percentage points.
    pub delta_accuracy: f64,
    pub delta_dp_diff: f64,
    pub delta_eo_diff: f64,
    pub repeats: usize,
    pub split_fraction: f64,
    pub per_repeat: Vec<RepeatOutcome>,
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn pick<T: Clone>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i].clone()).collect()
}

fn two_classes(labels: &[bool], idx: &[usize]) -> bool {
    let pos = idx.iter().filter(|&&i| labels[i]).count();
    pos > 0 && pos < idx.len()
}

/// A split is usable when every group appears in the test half, both
/// training label sets have both classes, and the test metrics are defined.
fn draw_split(
    rng: &mut ChaCha8Rng,
    n: usize,
    n_train: usize,
    truth: &[bool],
    td_labels: &[bool],
    groups: &[usize],
    n_groups: usize,
) -> Option<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let test = order.split_off(n_train);
    let train = order;
    let mut seen = vec![false; n_groups];
    for &i in &test {
        seen[groups[i]] = true;
    }
    let usable =
        seen.iter().all(|&s| s) && two_classes(truth, &train) && two_classes(td_labels, &train);
    usable.then_some(Split { train, test })
}

fn scores(report: &FairnessReport) -> Option<(f64, f64, f64)> {
    Some((report.accuracy?, report.dp_diff?, report.eo_diff?))
}

fn run_repeat(
    repeat: usize,
    features: &[Vec<f64>],
    truth: &[bool],
    td_labels: &[bool],
    groups: &[usize],
    n_groups: usize,
    cfg: &DeltaConfig,
) -> Result<RepeatOutcome> {
    let n = truth.len();
    let n_train = ((n as f64) * cfg.split_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(repeat as u64));
    for attempt in 1..=cfg.max_attempts {
        let Some(split) = draw_split(&mut rng, n, n_train, truth, td_labels, groups, n_groups)
        else {
            continue;
        };
        let x_train = pick(features, &split.train);
        let model_truth = train_logistic(&x_train, &pick(truth, &split.train), &cfg.logistic)?;
        let model_td = train_logistic(&x_train, &pick(td_labels, &split.train), &cfg.logistic)?;

        let x_test = pick(features, &split.test);
        let y_test = pick(truth, &split.test);
        let g_test = pick(groups, &split.test);
        let rep_truth = evaluate(&model_truth.predict_all(&x_test), &y_test, &g_test)?;
        let rep_td = evaluate(&model_td.predict_all(&x_test), &y_test, &g_test)?;
        let (Some(a), Some(b)) = (scores(&rep_truth), scores(&rep_td)) else {
            continue;
        };
        return Ok(RepeatOutcome {
            repeat,
            attempts: attempt,
            accuracy_truth: a.0,
            accuracy_td: b.0,
            dp_diff_truth: a.1,
            dp_diff_td: b.1,
            eo_diff_truth: a.2,
            eo_diff_td: b.2,
        });
    }
    Err(Error::InvalidInput(format!(
        "repeat {repeat}: no usable train/test split in {} attempts \
         (every group must reach the test half and both label sets need two classes in training)",
        cfg.max_attempts
    )))
}

/// Repeats run in parallel; repeat `r` draws its split from `seed + r`, so
/// the report does not depend on the thread count.
pub fn delta_experiment(
    features: &[Vec<f64>],
    truth: &[bool],
    td_labels: &[bool],
    groups: &[usize],
    cfg: &DeltaConfig,
) -> Result<DeltaReport> {
    let n = truth.len();
    if features.len() != n || td_labels.len() != n || groups.len() != n {
        return Err(Error::InvalidInput(format!(
            "misaligned inputs: {} feature rows, {n} truths, {} td labels, {} groups",
            features.len(),
            td_labels.len(),
            groups.len()
        )));
    }
    let mut problems = Vec::new();
    if cfg.repeats == 0 {
        problems.push("repeats must be >= 1".to_string());
    }
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        problems.push(format!(
            "split_fraction must be in (0, 1), got {}",
            cfg.split_fraction
        ));
    }
    if cfg.max_attempts == 0 {
        problems.push("max_attempts must be >= 1".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    if groups
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .len()
        < 2
    {
        return Err(Error::InvalidInput(
            "the delta experiment needs at least two groups".into(),
        ));
    }

    let per_repeat: Vec<RepeatOutcome> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_repeat(r, features, truth, td_labels, groups, n_groups, cfg))
        .collect::<Result<_>>()?;

    let mean = |f: &dyn Fn(&RepeatOutcome) -> f64| {
        per_repeat.iter().map(f).sum::<f64>() / per_repeat.len() as f64
    };
    Ok(DeltaReport {
        delta_accuracy: 100.0 * mean(&|r| r.accuracy_truth - r.accuracy_td),
        delta_dp_diff: mean(&|r| r.dp_diff_truth - r.dp_diff_td),
        delta_eo_diff: mean(&|r| r.eo_diff_truth - r.eo_diff_td),
        repeats: cfg.repeats,
        split_fraction: cfg.split_fraction,
        per_repeat,
    })
}
