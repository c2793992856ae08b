//! Truth discovery: inferring each task's label from conflicting answers.
//!
//! * [`majority_vote`]: unweighted vote share.
//! * [`dawid_skene`]: per-worker confusion matrices fitted by EM.
//! * [`learning_from_crowds`]: two-coin (sensitivity/specificity) workers,
//!   optionally with a logistic prior over task features.
//!
//! Both EM methods start from the majority-vote soft posteriors, which fixes
//! the label orientation and makes runs reproducible. The E-step runs in
//! parallel over tasks and every reduction runs in task order, so results do
//! not depend on the size of the thread pool.

mod dawid_skene;
mod lfc;
mod majority;

pub use dawid_skene::{dawid_skene, ConfusionMatrix, DawidSkene, DsFit, DsParams};
pub use lfc::{learning_from_crowds, LfcFit, TwoCoinParams};
pub use majority::{majority_vote, weighted_majority_vote, WeightedVote};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the largest per-task posterior change falls below this.
    pub tol: f64,
    /// Laplace pseudo-count added to every confusion-matrix cell and to the
    /// class prior.
    pub smoothing: f64,
    /// Recorded for reproducibility; initialization is deterministic.
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            smoothing: 0.01,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.max_iter < 1 {
            problems.push("max_iter must be at least 1".to_string());
        }
        if !(self.tol > 0.0) {
            problems.push(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            problems.push(format!(
                "smoothing must be a finite value >= 0, got {}",
                self.smoothing
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// `ln(x)` with zero mapped to a large negative finite value.
#[inline]
pub(crate) fn safe_ln(x: f64) -> f64 {
    x.max(1e-300).ln()
}

/// Posterior of the positive class and `ln(e^a + e^b)` from two log-weights.
#[inline]
pub(crate) fn normalize_log_pair(log_pos: f64, log_neg: f64) -> (f64, f64) {
    let hi = log_pos.max(log_neg);
    let lse = hi + ((log_pos - hi).exp() + (log_neg - hi).exp()).ln();
    ((log_pos - lse).exp(), lse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_lists_every_problem() {
        let cfg = EmConfig {
            max_iter: 0,
            tol: 0.0,
            smoothing: -1.0,
            seed: 0,
        };
        match cfg.validate() {
            Err(Error::Config(problems)) => assert_eq!(problems.len(), 3),
            other => panic!("expected config error, got {other:?}"),
        }
        assert!(EmConfig::default().validate().is_ok());
    }

    #[test]
    fn log_pair_normalization() {
        let (p, lse) = normalize_log_pair(0.5f64.ln(), 0.25f64.ln());
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert!((lse - 0.75f64.ln()).abs() < 1e-15);
        let (p, _) = normalize_log_pair(-2000.0, -2001.0);
        assert!(p.is_finite() && p > 0.7);
    }
}
