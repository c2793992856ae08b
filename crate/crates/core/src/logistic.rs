//! Binary logistic model and its (soft-target, sample-weighted) log-loss.

use serde::{Deserialize, Serialize};

use crate::model::decide;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// Packs as `[weights..., bias]`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn from_params(params: &[f64]) -> Self {
        let (bias, weights) = params.split_last().expect("at least the bias");
        Self {
            weights: weights.to_vec(),
            bias: *bias,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        linear(&self.weights, self.bias, x)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        decide(self.probability(x))
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Vec<bool> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn probabilities(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.probability(x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

#[inline]
pub(crate) fn linear(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + bias
}

/// Weighted mean cross-entropy against soft targets plus `l2/2 * |w|^2`
/// (bias unpenalized). `params` is `[weights..., bias]`; the gradient is
/// written into `grad`. Sample weights are normalized by their sum.
pub fn soft_logloss(
    params: &[f64],
    xs: &[Vec<f64>],
    targets: &[f64],
    sample_weights: Option<&[f64]>,
    l2: f64,
    grad: &mut [f64],
) -> f64 {
    let (bias, weights) = params.split_last().expect("at least the bias");
    let dim = weights.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let total_weight = match sample_weights {
        Some(sw) => sw.iter().sum::<f64>(),
        None => xs.len() as f64,
    };
    let mut loss = 0.0;
    for (i, (x, &t)) in xs.iter().zip(targets).enumerate() {
        let sw = sample_weights.map_or(1.0, |s| s[i]);
        if sw == 0.0 {
            continue;
        }
        let z = linear(weights, *bias, x);
        // -(t ln s(z) + (1-t) ln(1-s(z))) = softplus(z) - t z
        loss += sw * (softplus(z) - t * z);
        let r = sw * (sigmoid(z) - t);
        for (g, xj) in grad[..dim].iter_mut().zip(x) {
            *g += r * xj;
        }
        grad[dim] += r;
    }
    let scale = if total_weight > 0.0 {
        1.0 / total_weight
    } else {
        0.0
    };
    loss *= scale;
    grad.iter_mut().for_each(|g| *g *= scale);
    if l2 > 0.0 {
        for (g, w) in grad[..dim].iter_mut().zip(weights) {
            *g += l2 * w;
        }
        loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    }
    loss
}
