use crate::model::{Algorithm, AnnotationMatrix, TaskId, TdResult};

/// Posterior is the share of positive votes; labels follow the tie rule.
pub fn majority_vote(matrix: &AnnotationMatrix) -> TdResult {
    TdResult::from_posteriors(Algorithm::Mv, soft_votes(matrix))
}

pub(crate) fn soft_votes(matrix: &AnnotationMatrix) -> Vec<f64> {
    matrix
        .tasks()
        .map(|t| {
            let answers = matrix.task_answers(t);
            let pos = answers.iter().filter(|a| a.label).count();
            pos as f64 / answers.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedVote {
    pub result: TdResult,
    /// Tasks whose labelers all had zero weight; these fall back to the
    /// unweighted vote.
    pub fallback_tasks: Vec<TaskId>,
}

/// Majority vote with one non-negative weight per worker.
pub fn weighted_majority_vote(
    matrix: &AnnotationMatrix,
    weights: &[f64],
    algorithm: Algorithm,
) -> WeightedVote {
    assert_eq!(weights.len(), matrix.n_workers(), "one weight per worker");
    let mut fallback_tasks = Vec::new();
    let posteriors = matrix
        .tasks()
        .map(|t| {
            let answers = matrix.task_answers(t);
            let (pos, total) = answers.iter().fold((0.0, 0.0), |(p, n), a| {
                let w = weights[a.worker.0];
                (if a.label { p + w } else { p }, n + w)
            });
            if total > 0.0 {
                pos / total
            } else {
                fallback_tasks.push(t);
                answers.iter().filter(|a| a.label).count() as f64 / answers.len() as f64
            }
        })
        .collect();
    let mut result = TdResult::from_posteriors(algorithm, posteriors);
    if !fallback_tasks.is_empty() {
        result.notes.push(format!(
            "{} task(s) had only zero-weight labelers and fell back to unweighted voting",
            fallback_tasks.len()
        ));
    }
    WeightedVote {
        result,
        fallback_tasks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_annotation_matrix;

    #[test]
    fn two_thirds_vote() {
        let m = build_annotation_matrix(&[(0, 0, 1), (0, 1, 1), (0, 2, 0)]).unwrap();
        let r = majority_vote(&m);
        assert!((r.posteriors[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.labels, vec![true]);
    }

    #[test]
    fn even_split_resolves_positive() {
        let m = build_annotation_matrix(&[(0, 0, 1), (0, 1, 0)]).unwrap();
        let r = majority_vote(&m);
        assert_eq!(r.posteriors, vec![0.5]);
        assert_eq!(r.labels, vec![true]);
    }

    #[test]
    fn weighted_vote_falls_back_when_weights_vanish() {
        let m = build_annotation_matrix(&[(0, 0, 1), (0, 1, 0), (1, 1, 0), (1, 2, 1)]).unwrap();
        let wv = weighted_majority_vote(&m, &[0.0, 0.0, 1.0], Algorithm::FairTdPre);
        assert_eq!(wv.fallback_tasks, vec![TaskId(0)]);
        assert_eq!(wv.result.posteriors, vec![0.5, 1.0]);
        assert_eq!(wv.result.notes.len(), 1);

        let unit = weighted_majority_vote(&m, &[1.0; 3], Algorithm::Mv);
        assert_eq!(unit.result, majority_vote(&m));
    }
}
