use rayon::prelude::*;
use serde::Serialize;

use super::majority::soft_votes;
use super::{normalize_log_pair, safe_ln, EmConfig};
use crate::error::{Error, Result};
use crate::model::{decide, Algorithm, AnnotationMatrix, TdResult};

/// `rows[a][b]` is P(worker reports b | true label a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub rows: [[f64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn prob(&self, truth: bool, reported: bool) -> f64 {
        self.rows[truth as usize][reported as usize]
    }

    pub fn sensitivity(&self) -> f64 {
        self.rows[1][1]
    }

    pub fn specificity(&self) -> f64 {
        self.rows[0][0]
    }

    /// Expected fraction of correct answers under class prior `prior`.
    pub fn accuracy(&self, prior: f64) -> f64 {
        prior * self.rows[1][1] + (1.0 - prior) * self.rows[0][0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsParams {
    /// P(y = 1).
    pub prior: f64,
    pub confusion: Vec<ConfusionMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsFit {
    pub result: TdResult,
    pub params: DsParams,
}

/// Runs Dawid-Skene EM to convergence.
pub fn dawid_skene(matrix: &AnnotationMatrix, cfg: &EmConfig) -> Result<DsFit> {
    Ok(DawidSkene::new(matrix, cfg)?.run())
}

/// Step-wise Dawid-Skene EM state.
///
/// Posteriors start at the majority-vote shares. One iteration is an M-step
/// (smoothed confusion matrices and prior from the current posteriors)
/// followed by an E-step (new posteriors and the observed-data
/// log-likelihood under those parameters).
#[derive(Debug, Clone)]
pub struct DawidSkene<'a> {
    matrix: &'a AnnotationMatrix,
    cfg: EmConfig,
    posteriors: Vec<f64>,
    params: Option<DsParams>,
    trace: Vec<f64>,
    loglik: Option<f64>,
    iterations: usize,
    converged: bool,
}

impl<'a> DawidSkene<'a> {
    pub fn new(matrix: &'a AnnotationMatrix, cfg: &EmConfig) -> Result<Self> {
        cfg.validate()?;
        if matrix.n_workers() == 0 {
            return Err(Error::InvalidInput("matrix has no workers".into()));
        }
        Ok(Self {
            matrix,
            cfg: *cfg,
            posteriors: soft_votes(matrix),
            params: None,
            trace: Vec::new(),
            loglik: None,
            iterations: 0,
            converged: false,
        })
    }

    pub fn posteriors(&self) -> &[f64] {
        &self.posteriors
    }

    pub fn params(&self) -> Option<&DsParams> {
        self.params.as_ref()
    }

    /// Penalized log-likelihood after each completed iteration.
    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    /// Smoothed maximum-a-posteriori parameters given task posteriors.
    pub fn m_step(&self, posteriors: &[f64]) -> DsParams {
        let s = self.cfg.smoothing;
        let n = posteriors.len() as f64;
        let prior = (posteriors.iter().sum::<f64>() + s) / (n + 2.0 * s);

        let confusion = self
            .matrix
            .workers()
            .map(|w| {
                // counts[a][b]: expected number of answers b on tasks of class a
                let mut counts = [[0.0f64; 2]; 2];
                for a in self.matrix.worker_answers(w) {
                    let q = posteriors[a.task.0];
                    let b = a.label as usize;
                    counts[1][b] += q;
                    counts[0][b] += 1.0 - q;
                }
                let mut rows = [[0.5f64; 2]; 2];
                for (row, c) in rows.iter_mut().zip(&counts) {
                    let denom = c[0] + c[1] + 2.0 * s;
                    if denom > 0.0 {
                        row[0] = (c[0] + s) / denom;
                        row[1] = (c[1] + s) / denom;
                    }
                }
                ConfusionMatrix { rows }
            })
            .collect();
        DsParams { prior, confusion }
    }

    /// Task posteriors and observed-data log-likelihood under `params`.
    pub fn e_step(&self, params: &DsParams) -> (Vec<f64>, f64) {
        let log_prior = [safe_ln(1.0 - params.prior), safe_ln(params.prior)];
        let log_conf: Vec<[[f64; 2]; 2]> = params
            .confusion
            .iter()
            .map(|c| c.rows.map(|row| row.map(safe_ln)))
            .collect();
        let matrix = self.matrix;
        let per_task: Vec<(f64, f64)> = (0..matrix.n_tasks())
            .into_par_iter()
            .map(|t| {
                let mut log_pos = log_prior[1];
                let mut log_neg = log_prior[0];
                for a in matrix.task_answers(crate::model::TaskId(t)) {
                    let lc = &log_conf[a.worker.0];
                    log_pos += lc[1][a.label as usize];
                    log_neg += lc[0][a.label as usize];
                }
                normalize_log_pair(log_pos, log_neg)
            })
            .collect();
        let loglik = per_task.iter().map(|&(_, ll)| ll).sum();
        (per_task.into_iter().map(|(q, _)| q).collect(), loglik)
    }

    /// Log-likelihood plus the log-density of the smoothing prior; this is
    /// the quantity EM never decreases. Equal to the plain log-likelihood
    /// when smoothing is zero.
    pub fn penalized(&self, params: &DsParams, loglik: f64) -> f64 {
        let s = self.cfg.smoothing;
        if s == 0.0 {
            return loglik;
        }
        let mut penalty = safe_ln(params.prior) + safe_ln(1.0 - params.prior);
        for c in &params.confusion {
            penalty += c.rows.iter().flatten().map(|&p| safe_ln(p)).sum::<f64>();
        }
        loglik + s * penalty
    }

    /// Runs one M+E iteration, applying `project` to the new posteriors.
    /// Returns the largest posterior change.
    fn iterate<P>(&mut self, project: &mut P) -> f64
    where
        P: FnMut(&mut [f64]),
    {
        let params = self.m_step(&self.posteriors);
        let (mut next, loglik) = self.e_step(&params);
        project(&mut next);
        let change = next
            .iter()
            .zip(&self.posteriors)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.trace.push(self.penalized(&params, loglik));
        self.loglik = Some(loglik);
        self.posteriors = next;
        self.params = Some(params);
        self.iterations += 1;
        change
    }

    /// Runs one iteration; returns the largest posterior change.
    pub fn step(&mut self) -> f64 {
        self.iterate(&mut |_: &mut [f64]| {})
    }

    pub fn run(self) -> DsFit {
        self.run_projected(Algorithm::Ds, |_: &mut [f64]| {})
    }

    pub(crate) fn run_projected<P>(mut self, algorithm: Algorithm, mut project: P) -> DsFit
    where
        P: FnMut(&mut [f64]),
    {
        while self.iterations < self.cfg.max_iter {
            if self.iterate(&mut project) < self.cfg.tol {
                self.converged = true;
                break;
            }
        }
        let params = self.params.take().expect("at least one iteration has run");
        let labels = self.posteriors.iter().map(|&p| decide(p)).collect();
        let result = TdResult {
            algorithm,
            posteriors: self.posteriors,
            labels,
            iterations: self.iterations,
            final_loglik: self.loglik,
            loglik_trace: self.trace,
            converged: self.converged,
            achieved_violation: None,
            notes: Vec::new(),
        };
        DsFit { result, params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_annotation_matrix;
    use crate::truth::majority_vote;

    #[test]
    fn single_vote_single_iteration_by_hand() {
        // posterior 1 from the vote; M-step with s = 1 gives prior 2/3,
        // P(1|1) = 2/3 and P(1|0) = 1/2, so the E-step yields
        // (2/3 * 2/3) / (2/3 * 2/3 + 1/3 * 1/2) = 8/11.
        let m = build_annotation_matrix(&[(0, 0, 1)]).unwrap();
        let cfg = EmConfig {
            max_iter: 1,
            smoothing: 1.0,
            ..EmConfig::default()
        };
        let fit = dawid_skene(&m, &cfg).unwrap();
        assert!((fit.result.posteriors[0] - 8.0 / 11.0).abs() < 1e-15);
        assert!((fit.params.prior - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fit.result.iterations, 1);
        assert!(!fit.result.converged);
    }

    #[test]
    fn starts_from_majority_vote() {
        let m = build_annotation_matrix(&[(0, 0, 1), (0, 1, 0), (0, 2, 1), (1, 0, 0), (1, 2, 0)])
            .unwrap();
        let ds = DawidSkene::new(&m, &EmConfig::default()).unwrap();
        assert_eq!(ds.posteriors(), majority_vote(&m).posteriors.as_slice());
    }

    #[test]
    fn unanimous_workers_keep_votes() {
        let mut rows = Vec::new();
        for t in 0..20u64 {
            for w in 0..4u64 {
                rows.push((t, w, (t % 3 == 0) as u8));
            }
        }
        let m = build_annotation_matrix(&rows).unwrap();
        let fit = dawid_skene(&m, &EmConfig::default()).unwrap();
        let mv = majority_vote(&m);
        assert_eq!(fit.result.labels, mv.labels);
        for (q, v) in fit.result.posteriors.iter().zip(&mv.posteriors) {
            assert!((q - v).abs() < 1e-3);
        }
        for c in &fit.params.confusion {
            assert!(c.rows[0][0] > 0.99 && c.rows[1][1] > 0.99);
        }
    }

    #[test]
    fn confusion_rows_are_distributions() {
        let m = build_annotation_matrix(&[(0, 0, 1), (0, 1, 0), (1, 0, 0), (2, 1, 1), (2, 2, 1)])
            .unwrap();
        let fit = dawid_skene(&m, &EmConfig::default()).unwrap();
        for c in &fit.params.confusion {
            for row in c.rows {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
        assert_eq!(fit.result.loglik_trace.len(), fit.result.iterations);
    }
}
