use rayon::prelude::*;
use serde::Serialize;

use super::majority::soft_votes;
use super::{normalize_log_pair, safe_ln, EmConfig};
use crate::error::{Error, Result};
use crate::logistic::{soft_logloss, LogisticModel};
use crate::model::{decide, Algorithm, AnnotationMatrix, TaskId, TdResult};
use crate::optim::{minimize, GdConfig};

/// Two-coin worker model: `sensitivity[j]` = P(report 1 | y = 1),
/// `specificity[j]` = P(report 0 | y = 0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoCoinParams {
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    /// Class prevalence P(y = 1); absent when a feature model supplies a
    /// per-task prior instead.
    pub prevalence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfcFit {
    pub result: TdResult,
    pub params: TwoCoinParams,
    /// Logistic prior over task features, in feature mode.
    pub model: Option<LogisticModel>,
}

/// Inner fit of the logistic prior in each M-step.
const PRIOR_FIT: GdConfig = GdConfig {
    learning_rate: 0.1,
    max_steps: 200,
    grad_tol: 1e-6,
    growth: 1.0,
};

enum Prior {
    Constant(f64),
    Logistic(LogisticModel),
}

/// Two-coin EM. Without features the class prior is a single prevalence;
/// with features it is a logistic model refit (warm-started) in every
/// M-step.
pub fn learning_from_crowds(
    matrix: &AnnotationMatrix,
    features: Option<&[Vec<f64>]>,
    cfg: &EmConfig,
) -> Result<LfcFit> {
    cfg.validate()?;
    if matrix.n_workers() == 0 {
        return Err(Error::InvalidInput("matrix has no workers".into()));
    }
    if let Some(xs) = features {
        if xs.len() != matrix.n_tasks() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows for {} tasks",
                xs.len(),
                matrix.n_tasks()
            )));
        }
    }
    let s = cfg.smoothing;
    let n = matrix.n_tasks();
    let mut mu = soft_votes(matrix);
    let mut prior = match features {
        Some(xs) => Prior::Logistic(LogisticModel::zeros(xs.first().map_or(0, Vec::len))),
        None => Prior::Constant(0.5),
    };
    let mut alpha = vec![0.5; matrix.n_workers()];
    let mut beta = vec![0.5; matrix.n_workers()];
    let mut trace = Vec::new();
    let mut loglik = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut notes = Vec::new();

    while iterations < cfg.max_iter {
        // M-step: coins
        for w in matrix.workers() {
            let (mut pos_hits, mut pos_mass, mut neg_hits, mut neg_mass) = (0.0, 0.0, 0.0, 0.0);
            for a in matrix.worker_answers(w) {
                let m = mu[a.task.0];
                pos_mass += m;
                neg_mass += 1.0 - m;
                if a.label {
                    pos_hits += m;
                } else {
                    neg_hits += 1.0 - m;
                }
            }
            alpha[w.0] = ratio_or_half(pos_hits + s, pos_mass + 2.0 * s);
            beta[w.0] = ratio_or_half(neg_hits + s, neg_mass + 2.0 * s);
        }
        // M-step: class prior
        let mut penalty = alpha
            .iter()
            .chain(&beta)
            .map(|&p| safe_ln(p) + safe_ln(1.0 - p))
            .sum::<f64>();
        match (&mut prior, features) {
            (Prior::Constant(p), _) => {
                *p = (mu.iter().sum::<f64>() + s) / (n as f64 + 2.0 * s);
                penalty += safe_ln(*p) + safe_ln(1.0 - *p);
            }
            (Prior::Logistic(model), Some(xs)) => {
                let fit = minimize(
                    |params, grad| soft_logloss(params, xs, &mu, None, 0.0, grad),
                    model.to_params(),
                    &PRIOR_FIT,
                );
                *model = LogisticModel::from_params(&fit.params);
                if !model.is_finite() {
                    notes.push(format!(
                        "logistic prior diverged at iteration {}",
                        iterations + 1
                    ));
                    iterations += 1;
                    break;
                }
            }
            (Prior::Logistic(_), None) => unreachable!("logistic prior without features"),
        }

        // E-step
        let log_alpha: Vec<[f64; 2]> = alpha
            .iter()
            .map(|&a| [safe_ln(1.0 - a), safe_ln(a)])
            .collect();
        let log_beta: Vec<[f64; 2]> = beta
            .iter()
            .map(|&b| [safe_ln(b), safe_ln(1.0 - b)])
            .collect();
        let prior_ref = &prior;
        let per_task: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|t| {
                let p = match prior_ref {
                    Prior::Constant(p) => *p,
                    Prior::Logistic(model) => {
                        model.probability(&features.expect("feature mode")[t])
                    }
                };
                let mut log_a = safe_ln(p);
                let mut log_b = safe_ln(1.0 - p);
                for ans in matrix.task_answers(TaskId(t)) {
                    let l = ans.label as usize;
                    log_a += log_alpha[ans.worker.0][l];
                    log_b += log_beta[ans.worker.0][l];
                }
                normalize_log_pair(log_a, log_b)
            })
            .collect();
        let ll: f64 = per_task.iter().map(|&(_, ll)| ll).sum();
        let change = per_task
            .iter()
            .zip(&mu)
            .map(|(&(m, _), old)| (m - old).abs())
            .fold(0.0, f64::max);
        mu = per_task.into_iter().map(|(m, _)| m).collect();
        trace.push(if s == 0.0 { ll } else { ll + s * penalty });
        loglik = Some(ll);
        iterations += 1;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    let labels = mu.iter().map(|&m| decide(m)).collect();
    let (prevalence, model) = match prior {
        Prior::Constant(p) => (Some(p), None),
        Prior::Logistic(m) => (None, Some(m)),
    };
    if model.as_ref().is_some_and(|m| !m.is_finite()) {
        converged = false;
    }
    Ok(LfcFit {
        result: TdResult {
            algorithm: Algorithm::Lfc,
            posteriors: mu,
            labels,
            iterations,
            loglik_trace: trace,
            final_loglik: loglik,
            converged,
            achieved_violation: None,
            notes,
        },
        params: TwoCoinParams {
            sensitivity: alpha,
            specificity: beta,
            prevalence,
        },
        model,
    })
}

fn ratio_or_half(num: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        num / denom
    } else {
        0.5
    }
}
