//! Prejudice remover: logistic regression with a mutual-information penalty.
//!
//! The prejudice index of a model is the mutual information between its
//! prediction event and the sensitive group, with the prediction event drawn
//! from the model's probabilities:
//!
//! `PI = sum_s pi_s * KL(Bern(m_s) || Bern(m))`
//!
//! where `pi_s` is the share of group `s`, `m_s` the mean predicted
//! probability within it and `m` the overall mean. The trained objective is
//! `logloss + l2/2 |w|^2 + eta * PI`.

use crate::error::{Error, Result};
use crate::logistic::{linear, sigmoid, soft_logloss, LogisticModel};
use crate::optim::minimize;

use super::{check_training_set, targets, LogisticConfig};

const EPS: f64 = 1e-12;

fn logit(p: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    (p / (1.0 - p)).ln()
}

fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a <= 0.0 {
            0.0
        } else {
            a * (a / b.max(EPS)).ln()
        }
    };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Prejudice index at `params` (`[weights..., bias]`), writing its gradient
/// into `grad`.
pub fn prejudice_index(
    params: &[f64],
    features: &[Vec<f64>],
    groups: &[usize],
    grad: &mut [f64],
) -> f64 {
    let (bias, weights) = params.split_last().expect("at least the bias");
    let dim = weights.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = features.len();
    if n == 0 {
        return 0.0;
    }
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let probs: Vec<f64> = features
        .iter()
        .map(|x| sigmoid(linear(weights, *bias, x)))
        .collect();
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&p, &g) in probs.iter().zip(groups) {
        sums[g] += p;
        counts[g] += 1;
    }
    let overall = probs.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    let value = means
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&m, &c)| c as f64 / n as f64 * kl_bernoulli(m, overall))
        .sum();

    // dPI/dm_s = pi_s (logit m_s - logit m); the overall mean's own
    // contribution cancels.
    let coef: Vec<f64> = means.iter().map(|&m| logit(m) - logit(overall)).collect();
    for ((x, &p), &g) in features.iter().zip(&probs).zip(groups) {
        let r = coef[g] * p * (1.0 - p) / n as f64;
        for (gj, xj) in grad[..dim].iter_mut().zip(x) {
            *gj += r * xj;
        }
        grad[dim] += r;
    }
    value
}

/// Full prejudice-remover objective and gradient.
pub fn prejudice_remover_objective(
    params: &[f64],
    features: &[Vec<f64>],
    y: &[f64],
    groups: &[usize],
    eta: f64,
    l2: f64,
    grad: &mut [f64],
) -> f64 {
    let mut value = soft_logloss(params, features, y, None, l2, grad);
    if eta > 0.0 {
        let mut pi_grad = vec![0.0; grad.len()];
        value += eta * prejudice_index(params, features, groups, &mut pi_grad);
        for (g, p) in grad.iter_mut().zip(&pi_grad) {
            *g += eta * p;
        }
    }
    value
}

/// Trains with the same optimizer and starting point as
/// [`super::train_logistic`]; at `eta = 0` the two coincide exactly.
pub fn prejudice_remover(
    features: &[Vec<f64>],
    labels: &[bool],
    groups: &[usize],
    eta: f64,
    cfg: &LogisticConfig,
) -> Result<LogisticModel> {
    cfg.validate()?;
    if !(eta >= 0.0) || eta.is_infinite() {
        return Err(Error::Config(vec![format!(
            "eta must be finite and >= 0, got {eta}"
        )]));
    }
    let dim = check_training_set(features, labels)?;
    if groups.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} group entries for {} labels",
            groups.len(),
            labels.len()
        )));
    }
    let y = targets(labels);
    let fit = minimize(
        |params, grad| prejudice_remover_objective(params, features, &y, groups, eta, cfg.l2, grad),
        vec![0.0; dim + 1],
        &cfg.gd(),
    );
    Ok(LogisticModel::from_params(&fit.params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_zero_for_group_blind_model() {
        let xs = vec![
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.0],
            vec![-1.0, 1.0],
        ];
        let groups = [0, 1, 0, 1];
        let mut g = vec![0.0; 3];
        // depends on the first coordinate only, which is balanced across groups
        let pi = prejudice_index(&[2.0, 0.0, 0.3], &xs, &groups, &mut g);
        assert!(pi.abs() < 1e-15);
        let pi = prejudice_index(&[0.0, 2.0, 0.3], &xs, &groups, &mut g);
        assert!(pi > 0.05);
    }

    #[test]
    fn eta_zero_is_plain_logistic() {
        let xs = vec![
            vec![0.5, 1.0],
            vec![-1.0, 0.0],
            vec![2.0, 1.0],
            vec![-0.3, 0.0],
        ];
        let y = [true, false, true, true];
        let cfg = LogisticConfig::default();
        let a = prejudice_remover(&xs, &y, &[1, 0, 1, 0], 0.0, &cfg).unwrap();
        let b = super::super::train_logistic(&xs, &y, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
