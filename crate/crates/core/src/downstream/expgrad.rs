//! Exponentiated-gradient reduction for demographic parity.
//!
//! Fair classification is played as a zero-sum game between a learner, who
//! picks classifiers, and an auditor, who puts Lagrange multipliers on the
//! constraints `E[h | a] - E[h | b] <= epsilon` for every ordered pair of
//! groups, so `epsilon` bounds the mixture's `dp_diff` directly. The auditor updates the multipliers multiplicatively
//! (bounded by `bound` in total); the learner best-responds with a
//! cost-sensitive logistic fit. The answer is the uniform mixture of the
//! learner's responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fair_td::{ConstraintKind, FairnessConstraint};
use crate::logistic::LogisticModel;
use crate::metrics::{fairness_report_soft, FairnessReport, MetricOptions};

use super::{check_training_set, train_logistic, train_logistic_weighted, LogisticConfig};

/// A distribution over logistic models; a prediction is drawn by first
/// drawing a member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedClassifier {
    pub members: Vec<(LogisticModel, f64)>,
}

impl RandomizedClassifier {
    pub fn single(model: LogisticModel) -> Self {
        Self {
            members: vec![(model, 1.0)],
        }
    }

    /// Probability that the mixture predicts positive on `x`.
    pub fn expected_prediction(&self, x: &[f64]) -> f64 {
        self.members
            .iter()
            .filter(|(m, _)| m.predict(x))
            .map(|(_, w)| w)
            .sum::<f64>()
            .min(1.0)
    }

    pub fn expected_predictions(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.expected_prediction(x)).collect()
    }

    /// Expected metrics: confusion cells weighted by member probability.
    pub fn report(
        &self,
        xs: &[Vec<f64>],
        truth: &[bool],
        groups: &[usize],
    ) -> Result<FairnessReport> {
        let probs: Vec<Option<f64>> = self
            .expected_predictions(xs)
            .into_iter()
            .map(Some)
            .collect();
        let truth: Vec<Option<bool>> = truth.iter().copied().map(Some).collect();
        fairness_report_soft(&probs, &truth, groups, &MetricOptions::default())
    }

    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|(_, w)| w).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpGradConfig {
    /// Bound on the total multiplier mass; `None` uses `1 / epsilon`
    /// (at most 100).
    pub bound: Option<f64>,
    /// Multiplier step size is `eta0 / bound`.
    pub eta0: f64,
    pub max_rounds: usize,
    /// Stop once the duality gap falls below this.
    pub gap_tol: f64,
    pub logistic: LogisticConfig,
}

impl Default for ExpGradConfig {
    fn default() -> Self {
        Self {
            bound: None,
            eta0: 2.0,
            max_rounds: 50,
            gap_tol: 1e-3,
            logistic: LogisticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpGradFit {
    pub classifier: RandomizedClassifier,
    pub rounds: usize,
    pub converged: bool,
    pub gap: f64,
    /// Expected `dp_diff` of the returned mixture on the training set.
    pub train_violation: f64,
    pub train_error: f64,
    pub notes: Vec<String>,
}

/// Constant classifiers are logistic models with zero weights and a
/// saturated bias.
const CONSTANT_BIAS: f64 = 30.0;

fn constant(dim: usize, positive: bool) -> LogisticModel {
    LogisticModel {
        weights: vec![0.0; dim],
        bias: if positive {
            CONSTANT_BIAS
        } else {
            -CONSTANT_BIAS
        },
    }
}

struct Game<'a> {
    features: &'a [Vec<f64>],
    y: Vec<f64>,
    groups: Vec<usize>,
    counts: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    epsilon: f64,
    bound: f64,
    dim: usize,
    cfg: &'a ExpGradConfig,
}

impl Game<'_> {
    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    fn error(&self, preds: &[f64]) -> f64 {
        preds
            .iter()
            .zip(&self.y)
            .map(|(p, y)| (p - y).abs())
            .sum::<f64>()
            / self.n()
    }

    /// `E[h | a]` per group.
    fn rates(&self, preds: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.counts.len()];
        for (&p, &g) in preds.iter().zip(&self.groups) {
            sums[g] += p;
        }
        sums.iter().zip(&self.counts).map(|(s, c)| s / c).collect()
    }

    fn parity_gap(&self, preds: &[f64]) -> f64 {
        let r = self.rates(preds);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Constraint slacks over `self.pairs`; positive means violated.
    fn violations(&self, preds: &[f64]) -> Vec<f64> {
        let r = self.rates(preds);
        self.pairs
            .iter()
            .map(|&(a, b)| r[a] - r[b] - self.epsilon)
            .collect()
    }

    fn lagrangian(&self, preds: &[f64], lambda: &[f64]) -> f64 {
        self.error(preds)
            + self
                .violations(preds)
                .iter()
                .zip(lambda)
                .map(|(v, l)| v * l)
                .sum::<f64>()
    }

    /// Auditor's best response: all mass on the worst violated constraint.
    fn best_lambda_value(&self, preds: &[f64]) -> f64 {
        let worst = self
            .violations(preds)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        self.error(preds) + self.bound * worst.max(0.0)
    }

    fn predictions(&self, model: &LogisticModel) -> Vec<f64> {
        self.features
            .iter()
            .map(|x| if model.predict(x) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Learner's best response: the cost of predicting 1 rather than 0 on
    /// example `i` in group `a` is `(1 - 2 y_i) / n + mu_a / n_a`, with
    /// `mu_a` the multipliers on pairs led by `a` minus those trailed by `a`.
    /// That is a weighted classification problem. The fitted model
    /// competes with the two constant classifiers.
    fn best_h(&self, lambda: &[f64]) -> Result<(LogisticModel, Vec<f64>)> {
        let mut mu = vec![0.0; self.counts.len()];
        for (&(a, b), l) in self.pairs.iter().zip(lambda) {
            mu[a] += l;
            mu[b] -= l;
        }
        let costs: Vec<f64> = self
            .y
            .iter()
            .zip(&self.groups)
            .map(|(&y, &g)| (1.0 - 2.0 * y) / self.n() + mu[g] / self.counts[g])
            .collect();
        let labels: Vec<bool> = costs.iter().map(|&c| c < 0.0).collect();
        let weights: Vec<f64> = costs.iter().map(|c| c.abs()).collect();

        let mut candidates = vec![constant(self.dim, false), constant(self.dim, true)];
        let positives = labels.iter().filter(|&&l| l).count();
        if positives > 0 && positives < labels.len() && weights.iter().any(|&w| w > 0.0) {
            candidates.push(train_logistic_weighted(
                self.features,
                &labels,
                Some(&weights),
                &self.cfg.logistic,
            )?);
        }
        let mut best: Option<(f64, LogisticModel, Vec<f64>)> = None;
        for model in candidates {
            let preds = self.predictions(&model);
            let value = self.lagrangian(&preds, lambda);
            if best.as_ref().is_none_or(|(v, _, _)| value < *v) {
                best = Some((value, model, preds));
            }
        }
        let (_, model, preds) = best.expect("constant candidates");
        Ok((model, preds))
    }
}

fn multipliers(theta: &[f64], bound: f64) -> Vec<f64> {
    // B exp(theta_k) / (1 + sum exp(theta)), with the implicit zero entry
    let top = theta.iter().copied().fold(0.0, f64::max);
    let denom = (-top).exp() + theta.iter().map(|t| (t - top).exp()).sum::<f64>();
    theta
        .iter()
        .map(|t| bound * (t - top).exp() / denom)
        .collect()
}

/// Demographic-parity constrained classification. `epsilon >= 1` never
/// binds and returns plain logistic regression as a one-member mixture.
///
/// When the duality gap does not close within `max_rounds`, the running
/// mixture with the lowest `error + bound * excess violation` is returned
/// and a note says so.
pub fn exponentiated_gradient(
    features: &[Vec<f64>],
    labels: &[bool],
    groups: &[usize],
    constraint: &FairnessConstraint,
    cfg: &ExpGradConfig,
) -> Result<ExpGradFit> {
    constraint.validate()?;
    if constraint.kind != ConstraintKind::Dp {
        return Err(Error::Unsupported(
            "exponentiated gradient supports the dp constraint only".into(),
        ));
    }
    let dim = check_training_set(features, labels)?;
    if groups.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} group entries for {} labels",
            groups.len(),
            labels.len()
        )));
    }
    // dense, present-only group ids
    let mut present: Vec<usize> = groups.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::InvalidInput(
            "exponentiated gradient needs at least two groups".into(),
        ));
    }
    let dense: Vec<usize> = groups
        .iter()
        .map(|g| present.binary_search(g).expect("present"))
        .collect();
    let mut counts = vec![0.0; present.len()];
    for &g in &dense {
        counts[g] += 1.0;
    }

    let bound = cfg
        .bound
        .unwrap_or_else(|| (1.0 / constraint.epsilon).min(100.0));
    if !(bound > 0.0) || !(cfg.eta0 > 0.0) || cfg.max_rounds == 0 {
        return Err(Error::Config(vec![
            "exponentiated gradient needs bound > 0, eta0 > 0 and max_rounds >= 1".into(),
        ]));
    }
    let game = Game {
        features,
        y: super::targets(labels),
        groups: dense,
        pairs: (0..present.len())
            .flat_map(|a| {
                (0..present.len())
                    .filter(move |&b| b != a)
                    .map(move |b| (a, b))
            })
            .collect(),
        counts,
        epsilon: constraint.epsilon,
        bound,
        dim,
        cfg,
    };
    let finish = |classifier: RandomizedClassifier, rounds, converged, gap, notes| {
        let q = classifier.expected_predictions(features);
        ExpGradFit {
            train_error: game.error(&q),
            train_violation: game.parity_gap(&q),
            classifier,
            rounds,
            converged,
            gap,
            notes,
        }
    };

    if constraint.is_inactive() {
        let model = train_logistic(features, labels, &cfg.logistic)?;
        return Ok(finish(
            RandomizedClassifier::single(model),
            0,
            true,
            0.0,
            vec!["constraint inactive; plain logistic regression".into()],
        ));
    }

    let n = labels.len();
    let eta = cfg.eta0 / bound;
    let mut theta = vec![0.0; game.pairs.len()];
    let mut lambda_sum = vec![0.0; theta.len()];
    let mut models = Vec::new();
    let mut pred_sum = vec![0.0; n];
    // (primal value, rounds, gap) of the best running mixture
    let mut best: Option<(f64, usize, f64)> = None;
    let mut converged = None;

    for t in 1..=cfg.max_rounds {
        let lambda = multipliers(&theta, bound);
        let (model, preds) = game.best_h(&lambda)?;
        models.push(model);
        for (s, p) in pred_sum.iter_mut().zip(&preds) {
            *s += p;
        }
        for (s, l) in lambda_sum.iter_mut().zip(&lambda) {
            *s += l;
        }
        let q: Vec<f64> = pred_sum.iter().map(|s| s / t as f64).collect();
        let lambda_hat: Vec<f64> = lambda_sum.iter().map(|s| s / t as f64).collect();
        let l_hat = game.lagrangian(&q, &lambda_hat);
        let primal = game.best_lambda_value(&q);
        let (_, br_preds) = game.best_h(&lambda_hat)?;
        let gap = (primal - l_hat).max(l_hat - game.lagrangian(&br_preds, &lambda_hat));
        if best.is_none_or(|(v, _, _)| primal < v) {
            best = Some((primal, t, gap));
        }
        if gap <= cfg.gap_tol {
            converged = Some((t, gap));
            break;
        }
        for (th, v) in theta.iter_mut().zip(game.violations(&preds)) {
            *th += eta * v;
        }
    }

    let mut notes = Vec::new();
    let (rounds, gap) = match converged {
        Some(found) => found,
        None => {
            let (_, t, gap) = best.expect("at least one round");
            notes.push(format!(
                "duality gap above {} after {} rounds; returning the best running mixture (round {t})",
                cfg.gap_tol, cfg.max_rounds
            ));
            (t, gap)
        }
    };
    models.truncate(rounds);
    let w = 1.0 / rounds as f64;
    let classifier = RandomizedClassifier {
        members: models.into_iter().map(|m| (m, w)).collect(),
    };
    Ok(finish(classifier, rounds, converged.is_some(), gap, notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipliers_respect_bound() {
        let l = multipliers(&[0.0, 0.0, 0.0], 4.0);
        assert!(l.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let l = multipliers(&[800.0, 0.0], 2.0);
        assert!((l[0] - 2.0).abs() < 1e-12 && l[1] < 1e-300);
    }

    #[test]
    fn inactive_constraint_is_plain_logistic() {
        let xs = vec![vec![-1.0], vec![-0.5], vec![0.4], vec![1.0]];
        let y = [false, true, false, true];
        let g = [0, 0, 1, 1];
        let fit = exponentiated_gradient(
            &xs,
            &y,
            &g,
            &FairnessConstraint::dp(1.0),
            &ExpGradConfig::default(),
        )
        .unwrap();
        let plain = train_logistic(&xs, &y, &LogisticConfig::default()).unwrap();
        assert_eq!(fit.classifier.members, vec![(plain, 1.0)]);
    }

    #[test]
    fn mixture_expectation_is_member_average() {
        let c = RandomizedClassifier {
            members: vec![(constant(1, true), 0.25), (constant(1, false), 0.75)],
        };
        assert_eq!(c.expected_prediction(&[3.0]), 0.25);
        assert_eq!(c.total_weight(), 1.0);
    }
}
