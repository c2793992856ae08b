//! Randomized invariants over small instances.

use proptest::prelude::*;

use crowdfair::downstream::RandomizedClassifier;
use crowdfair::fair_td::{fair_td_post, parity_gap, FairnessConstraint};
use crowdfair::io::{format_float, round_sig};
use crowdfair::logistic::LogisticModel;
use crowdfair::metrics::{evaluate, fairness_report_soft, MetricOptions};
use crowdfair::model::{decide, Algorithm, AnnotationMatrix, TdResult};
use crowdfair::truth::{dawid_skene, learning_from_crowds, majority_vote, EmConfig};

/// Annotation rows over up to 15 tasks and 6 workers; every task has at
/// least one label.
fn crowd() -> impl Strategy<Value = Vec<(u64, u64, u8)>> {
    (1usize..15, 1usize..6)
        .prop_flat_map(|(n, m)| {
            prop::collection::vec(prop::collection::vec(prop::option::of(any::<bool>()), m), n)
        })
        .prop_map(|grid| {
            let mut rows = Vec::new();
            for (t, answers) in grid.iter().enumerate() {
                for (w, a) in answers.iter().enumerate() {
                    let a = if w == 0 && answers.iter().all(Option::is_none) {
                        Some(false)
                    } else {
                        *a
                    };
                    if let Some(label) = a {
                        rows.push((10 * t as u64 + 3, 100 + w as u64, label as u8));
                    }
                }
            }
            rows
        })
}

fn labeled_groups() -> impl Strategy<Value = (Vec<bool>, Vec<bool>, Vec<usize>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0usize..3, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ingestion_ignores_row_order(rows in crowd(), seed in any::<u64>()) {
        let mut shuffled = rows.clone();
        // deterministic Fisher-Yates from the seed
        let mut s = seed | 1;
        for i in (1..shuffled.len()).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            shuffled.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let a = AnnotationMatrix::from_rows(&rows).unwrap();
        let b = AnnotationMatrix::from_rows(&shuffled).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(majority_vote(&a).labels, majority_vote(&b).labels);
    }

    #[test]
    fn majority_vote_ignores_worker_ids(rows in crowd()) {
        let renamed: Vec<_> = rows.iter().map(|&(t, w, l)| (t, 1_000_000 - w, l)).collect();
        let a = majority_vote(&AnnotationMatrix::from_rows(&rows).unwrap());
        let b = majority_vote(&AnnotationMatrix::from_rows(&renamed).unwrap());
        prop_assert_eq!(a.posteriors, b.posteriors);
    }

    #[test]
    fn posteriors_are_probabilities_and_labels_follow_them(rows in crowd()) {
        let m = AnnotationMatrix::from_rows(&rows).unwrap();
        let em = EmConfig::default();
        let results = [
            majority_vote(&m),
            dawid_skene(&m, &em).unwrap().result,
            learning_from_crowds(&m, None, &em).unwrap().result,
        ];
        for r in results {
            prop_assert_eq!(r.len(), m.n_tasks());
            for (&p, &l) in r.posteriors.iter().zip(&r.labels) {
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert_eq!(l, decide(p));
            }
        }
    }

    #[test]
    fn metrics_ignore_group_names((pred, truth, groups) in labeled_groups(), perm in Just([2usize, 0, 1])) {
        let relabeled: Vec<usize> = groups.iter().map(|&g| perm[g]).collect();
        let a = evaluate(&pred, &truth, &groups).unwrap();
        let b = evaluate(&pred, &truth, &relabeled).unwrap();
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert_eq!(a.dp_diff, b.dp_diff);
        prop_assert_eq!(a.dp_ratio, b.dp_ratio);
        prop_assert_eq!(a.eo_diff, b.eo_diff);
        prop_assert_eq!(a.eo_ratio, b.eo_ratio);
    }

    #[test]
    fn post_processing_flips_fewer_labels_with_more_budget(
        posteriors in prop::collection::vec(0.0f64..1.0, 4..40),
        groups_seed in prop::collection::vec(0usize..2, 40),
        lo in 0.0f64..0.5,
        extra in 0.0f64..0.5,
    ) {
        let n = posteriors.len();
        let mut groups = groups_seed[..n].to_vec();
        groups[0] = 0;
        groups[1] = 1;
        let td = TdResult::from_posteriors(Algorithm::Ds, posteriors);
        let flips = |eps: f64| {
            let out = fair_td_post(&td, &groups, &FairnessConstraint::dp(eps), None).unwrap();
            assert!(parity_gap(&out.labels, &groups) <= eps);
            out.labels.iter().zip(&td.labels).filter(|(a, b)| a != b).count()
        };
        prop_assert!(flips(lo + extra) <= flips(lo));
    }

    #[test]
    fn mixture_metrics_are_convex_combinations(
        members in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 2), -1.0f64..1.0, 0.1f64..1.0), 1..5),
        points in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 2), any::<bool>(), 0usize..2), 4..30),
    ) {
        let total: f64 = members.iter().map(|m| m.2).sum();
        let clf = RandomizedClassifier {
            members: members
                .iter()
                .map(|(w, b, p)| (LogisticModel { weights: w.clone(), bias: *b }, p / total))
                .collect(),
        };
        let xs: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
        let truth: Vec<bool> = points.iter().map(|p| p.1).collect();
        let mut groups: Vec<usize> = points.iter().map(|p| p.2).collect();
        groups[0] = 0;
        groups[1] = 1;
        let mixed = clf.report(&xs, &truth, &groups).unwrap();

        // brute force: score every member on its own, then average
        let mut acc = 0.0;
        let mut rates = [0.0; 2];
        for (model, w) in &clf.members {
            let r = evaluate(&model.predict_all(&xs), &truth, &groups).unwrap();
            acc += w * r.accuracy.unwrap();
            for g in &r.per_group {
                rates[g.group.parse::<usize>().unwrap()] += w * g.positive_rate;
            }
        }
        prop_assert!((mixed.accuracy.unwrap() - acc).abs() < 1e-9);
        prop_assert!((mixed.dp_diff.unwrap() - (rates[0] - rates[1]).abs()).abs() < 1e-9);
    }

    #[test]
    fn soft_reports_reduce_to_hard_ones((pred, truth, groups) in labeled_groups()) {
        let soft: Vec<Option<f64>> = pred.iter().map(|&p| Some(p as u8 as f64)).collect();
        let truth_opt: Vec<Option<bool>> = truth.iter().copied().map(Some).collect();
        let a = fairness_report_soft(&soft, &truth_opt, &groups, &MetricOptions::default()).unwrap();
        let b = evaluate(&pred, &truth, &groups).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rendered_floats_keep_six_significant_digits(v in prop::num::f64::NORMAL) {
        let back: f64 = format_float(v).parse().unwrap();
        prop_assert_eq!(back, round_sig(v));
        prop_assert!((back - v).abs() <= 5e-6 * v.abs());
    }
}
