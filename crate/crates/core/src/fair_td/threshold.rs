//! Per-group decision thresholds over observed posteriors.
//!
//! Within a group a threshold `τ` labels a task positive iff its posterior is
//! `>= τ`. The candidate thresholds are the group's distinct posterior values
//! plus "nobody" (τ = +∞), so a group with `n` tasks has at most `n + 1`
//! labelings. Each candidate is costed against the unconstrained labeling
//! (posterior `>= 0.5`): first by the number of flipped tasks, then by the
//! summed `|posterior - 0.5|` of the flipped tasks.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::model::decide;

const COST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub flips: usize,
    pub confidence: f64,
}

impl Cost {
    pub const ZERO: Cost = Cost {
        flips: 0,
        confidence: 0.0,
    };

    fn add(self, other: Cost) -> Cost {
        Cost {
            flips: self.flips + other.flips,
            confidence: self.confidence + other.confidence,
        }
    }

    pub fn cmp(&self, other: &Cost) -> Ordering {
        self.flips
            .cmp(&other.flips)
            .then(self.confidence.total_cmp(&other.confidence))
    }

    /// `self <= other` allowing for summation-order rounding.
    fn within(&self, other: &Cost) -> bool {
        self.flips < other.flips
            || (self.flips == other.flips && self.confidence <= other.confidence + COST_TOL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Posterior threshold; `f64::INFINITY` labels nobody positive.
    pub threshold: f64,
    pub positives: usize,
    pub rate: f64,
    pub cost: Cost,
    /// Rates against ground truth, when it is supplied.
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

/// The tasks of one group and their candidate labelings, ordered by
/// increasing positive count.
#[derive(Debug, Clone)]
pub struct GroupThresholds {
    pub tasks: Vec<usize>,
    pub candidates: Vec<Candidate>,
    /// Index of the candidate reproducing the unconstrained labeling.
    pub baseline: usize,
}

impl GroupThresholds {
    pub fn new(tasks: Vec<usize>, posteriors: &[f64], truth: Option<&[bool]>) -> Self {
        let mut order = tasks.clone();
        order.sort_by(|&a, &b| posteriors[b].total_cmp(&posteriors[a]).then(a.cmp(&b)));
        let n = order.len();
        let pos_truth = truth.map_or(0, |t| order.iter().filter(|&&i| t[i]).count());
        let neg_truth = n - pos_truth;

        // Start from "nobody positive": every originally-positive task is flipped.
        let mut flips = order.iter().filter(|&&i| decide(posteriors[i])).count();
        let mut confidence: f64 = order
            .iter()
            .filter(|&&i| decide(posteriors[i]))
            .map(|&i| (posteriors[i] - 0.5).abs())
            .sum();
        let (mut tp, mut fp) = (0usize, 0usize);
        let rates = |tp: usize, fp: usize| {
            truth.map(|_| {
                (
                    (pos_truth > 0).then(|| tp as f64 / pos_truth as f64),
                    (neg_truth > 0).then(|| fp as f64 / neg_truth as f64),
                )
            })
        };
        let (tpr, fpr) = rates(0, 0).unwrap_or((None, None));
        let mut candidates = vec![Candidate {
            threshold: f64::INFINITY,
            positives: 0,
            rate: 0.0,
            cost: Cost { flips, confidence },
            tpr,
            fpr,
        }];

        let mut k = 0;
        while k < n {
            let value = posteriors[order[k]];
            // admit every task tied at this value
            while k < n && posteriors[order[k]] == value {
                let i = order[k];
                let margin = (posteriors[i] - 0.5).abs();
                if decide(posteriors[i]) {
                    flips -= 1;
                    confidence -= margin;
                } else {
                    flips += 1;
                    confidence += margin;
                }
                if let Some(t) = truth {
                    if t[i] {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
                k += 1;
            }
            let (tpr, fpr) = rates(tp, fp).unwrap_or((None, None));
            candidates.push(Candidate {
                threshold: value,
                positives: k,
                rate: k as f64 / n as f64,
                cost: Cost {
                    flips,
                    confidence: if flips == 0 { 0.0 } else { confidence.max(0.0) },
                },
                tpr,
                fpr,
            });
        }
        let baseline = candidates
            .iter()
            .position(|c| c.cost.flips == 0)
            .expect("the unconstrained labeling is always a candidate");
        Self {
            tasks,
            candidates,
            baseline,
        }
    }

    /// Tasks labeled positive by candidate `idx`, as a per-task membership
    /// over `self.tasks`.
    pub fn labels(&self, idx: usize, posteriors: &[f64]) -> Vec<(usize, bool)> {
        let threshold = self.candidates[idx].threshold;
        self.tasks
            .iter()
            .map(|&i| (i, posteriors[i] >= threshold))
            .collect()
    }
}

/// Choice of one candidate per group.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub choice: Vec<usize>,
    pub cost: Cost,
    pub violation: f64,
}

fn selection_violation(groups: &[GroupThresholds], choice: &[usize]) -> f64 {
    let rates = groups
        .iter()
        .zip(choice)
        .map(|(g, &c)| g.candidates[c].rate);
    let (lo, hi) = rates.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r), hi.max(r))
    });
    if hi < lo {
        0.0
    } else {
        hi - lo
    }
}

/// Cheapest selection whose positive rates all fit in some window of the
/// given width. Windows are anchored at every achievable rate; each group
/// independently takes its cheapest candidate inside the window.
fn cheapest_within(groups: &[GroupThresholds], anchors: &[f64], width: f64) -> Option<Selection> {
    let mut best: Option<(Cost, Vec<usize>)> = None;
    // sliding-window minimum per group over candidates sorted by rate
    let mut heads = vec![0usize; groups.len()];
    let mut tails = vec![0usize; groups.len()];
    let mut windows: Vec<VecDeque<usize>> = vec![VecDeque::new(); groups.len()];

    for &lo in anchors {
        let hi = lo + width + 1e-12;
        let mut total = Cost::ZERO;
        let mut choice = Vec::with_capacity(groups.len());
        let mut feasible = true;
        for (g, group) in groups.iter().enumerate() {
            let cands = &group.candidates;
            let window = &mut windows[g];
            while tails[g] < cands.len() && cands[tails[g]].rate <= hi {
                let cost = cands[tails[g]].cost;
                while window
                    .back()
                    .is_some_and(|&b| cands[b].cost.cmp(&cost) == Ordering::Greater)
                {
                    window.pop_back();
                }
                window.push_back(tails[g]);
                tails[g] += 1;
            }
            while heads[g] < cands.len() && cands[heads[g]].rate < lo - 1e-12 {
                if window.front() == Some(&heads[g]) {
                    window.pop_front();
                }
                heads[g] += 1;
            }
            match window.front() {
                Some(&idx) => {
                    total = total.add(cands[idx].cost);
                    choice.push(idx);
                }
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if feasible
            && best
                .as_ref()
                .is_none_or(|(c, _)| total.cmp(c) == Ordering::Less)
        {
            best = Some((total, choice));
        }
    }
    best.map(|(cost, choice)| Selection {
        violation: selection_violation(groups, &choice),
        choice,
        cost,
    })
}

/// Minimum-cost selection with positive-rate spread `<= epsilon`; among
/// minimum-cost selections, one with the smallest spread.
pub fn solve_parity(groups: &[GroupThresholds], epsilon: f64) -> Selection {
    if groups.is_empty() {
        return Selection {
            choice: Vec::new(),
            cost: Cost::ZERO,
            violation: 0.0,
        };
    }
    let mut anchors: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.candidates.iter().map(|c| c.rate))
        .collect();
    anchors.sort_by(f64::total_cmp);
    anchors.dedup();

    let epsilon = epsilon.max(0.0);
    // everybody-negative always fits, so a width-epsilon solution exists
    let best = cheapest_within(groups, &anchors, epsilon).expect("all-zero labeling is feasible");
    if best.violation == 0.0 {
        return best;
    }
    if let Some(tight) = cheapest_within(groups, &anchors, 0.0) {
        if tight.cost.within(&best.cost) {
            return tight;
        }
    }
    let target = best.cost;
    let (mut lo, mut hi) = (0.0, best.violation);
    let mut found = best;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match cheapest_within(groups, &anchors, mid) {
            Some(sel) if sel.cost.within(&target) => {
                hi = sel.violation.min(mid);
                found = sel;
            }
            _ => lo = mid,
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    found
}

/// Largest TPR gap and largest FPR gap over groups where each is defined,
/// combined as in the metrics module.
pub fn odds_violation(groups: &[GroupThresholds], choice: &[usize]) -> f64 {
    let spread = |vals: Vec<f64>| {
        if vals.len() < 2 {
            None
        } else {
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Some(hi - lo)
        }
    };
    let tpr = spread(
        groups
            .iter()
            .zip(choice)
            .filter_map(|(g, &c)| g.candidates[c].tpr)
            .collect(),
    );
    let fpr = spread(
        groups
            .iter()
            .zip(choice)
            .filter_map(|(g, &c)| g.candidates[c].fpr)
            .collect(),
    );
    tpr.into_iter().chain(fpr).fold(0.0, f64::max)
}

/// Exhaustive search when the joint candidate space is small.
pub const EXHAUSTIVE_LIMIT: usize = 250_000;

/// Equalized-odds threshold search. Enumerates every joint choice when the
/// product of candidate counts is at most [`EXHAUSTIVE_LIMIT`]; otherwise
/// greedily moves one group's threshold one step at a time towards lower
/// violation, starting from the unconstrained labeling.
pub fn solve_odds(groups: &[GroupThresholds], epsilon: f64) -> Selection {
    let size = groups
        .iter()
        .try_fold(1usize, |acc, g| acc.checked_mul(g.candidates.len()));
    let choice = match size {
        Some(size) if size <= EXHAUSTIVE_LIMIT => exhaustive_odds(groups, epsilon),
        _ => greedy_odds(groups, epsilon),
    };
    let cost = groups
        .iter()
        .zip(&choice)
        .fold(Cost::ZERO, |acc, (g, &c)| acc.add(g.candidates[c].cost));
    Selection {
        violation: odds_violation(groups, &choice),
        choice,
        cost,
    }
}

fn exhaustive_odds(groups: &[GroupThresholds], epsilon: f64) -> Vec<usize> {
    let mut current = vec![0usize; groups.len()];
    let mut best: Option<(bool, Cost, f64, Vec<usize>)> = None;
    loop {
        let v = odds_violation(groups, &current);
        let feasible = v <= epsilon + 1e-12;
        let cost = groups
            .iter()
            .zip(&current)
            .fold(Cost::ZERO, |acc, (g, &c)| acc.add(g.candidates[c].cost));
        let better = match &best {
            None => true,
            Some((bf, bc, bv, _)) => match (feasible, *bf) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => match cost.cmp(bc) {
                    Ordering::Less => true,
                    Ordering::Equal => v < *bv,
                    Ordering::Greater => false,
                },
                (false, false) => v < *bv || (v == *bv && cost.cmp(bc) == Ordering::Less),
            },
        };
        if better {
            best = Some((feasible, cost, v, current.clone()));
        }
        // odometer increment
        let mut g = 0;
        loop {
            if g == groups.len() {
                return best.expect("at least one combination").3;
            }
            current[g] += 1;
            if current[g] < groups[g].candidates.len() {
                break;
            }
            current[g] = 0;
            g += 1;
        }
    }
}

fn greedy_odds(groups: &[GroupThresholds], epsilon: f64) -> Vec<usize> {
    let mut choice: Vec<usize> = groups.iter().map(|g| g.baseline).collect();
    let mut violation = odds_violation(groups, &choice);
    while violation > epsilon {
        let mut best: Option<(f64, Cost, usize, usize)> = None;
        for (g, group) in groups.iter().enumerate() {
            let here = choice[g];
            for next in [here.wrapping_sub(1), here + 1] {
                if next >= group.candidates.len() {
                    continue;
                }
                let saved = choice[g];
                choice[g] = next;
                let v = odds_violation(groups, &choice);
                let cost = groups
                    .iter()
                    .zip(&choice)
                    .fold(Cost::ZERO, |acc, (gr, &c)| acc.add(gr.candidates[c].cost));
                choice[g] = saved;
                let better = best.as_ref().is_none_or(|(bv, bc, _, _)| {
                    v < *bv || (v == *bv && cost.cmp(bc) == Ordering::Less)
                });
                if better {
                    best = Some((v, cost, g, next));
                }
            }
        }
        match best {
            Some((v, _, g, next)) if v < violation => {
                choice[g] = next;
                violation = v;
            }
            _ => break,
        }
    }
    choice
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_cover_every_cut() {
        let post = [0.9, 0.9, 0.1];
        let g = GroupThresholds::new(vec![0, 1, 2], &post, None);
        let positives: Vec<usize> = g.candidates.iter().map(|c| c.positives).collect();
        assert_eq!(positives, vec![0, 2, 3]);
        assert_eq!(g.baseline, 1);
        assert_eq!(g.candidates[0].cost.flips, 2);
        assert_eq!(g.candidates[2].cost.flips, 1);
    }

    #[test]
    fn unconstrained_keeps_baseline() {
        let post = [0.9, 0.8, 0.3, 0.2, 0.1, 0.7];
        let groups = vec![
            GroupThresholds::new(vec![0, 1, 2], &post, None),
            GroupThresholds::new(vec![3, 4, 5], &post, None),
        ];
        let sel = solve_parity(&groups, 1.0);
        assert_eq!(sel.cost, Cost::ZERO);
        assert_eq!(sel.choice, vec![groups[0].baseline, groups[1].baseline]);
    }
}
