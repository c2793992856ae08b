//! How much do biased consensus labels hurt a classifier trained on them?
//! Labels are corrupted by hiding 20% of group A's positives, then a model
//! trained on them is compared with one trained on the truth.
//!
//!     cargo run --example downstream_delta

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdfair::downstream::{delta_experiment, DeltaConfig};
use crowdfair::simulate::{generate, SimConfig};

fn main() -> crowdfair::Result<()> {
    let cfg = SimConfig {
        n_tasks: 2000,
        base_rate: vec![0.7, 0.3],
        feature_dim: Some(4),
        seed: 4,
        ..SimConfig::default()
    };
    let data = generate(&cfg)?;
    let features = data.tasks.require_features("this example")?;
    let truth = data.tasks.require_truth("this example")?;
    let groups = data.tasks.groups();

    let same = delta_experiment(features, &truth, &truth, groups, &DeltaConfig::default())?;
    println!(
        "labels = truth:    delta acc {:+.3} pts, dp {:+.4}, eo {:+.4}",
        same.delta_accuracy, same.delta_dp_diff, same.delta_eo_diff
    );

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let corrupted: Vec<bool> = truth
        .iter()
        .zip(groups)
        .map(|(&y, &g)| {
            if y && g == 0 && rng.random_bool(0.2) {
                false
            } else {
                y
            }
        })
        .collect();
    let r = delta_experiment(
        features,
        &truth,
        &corrupted,
        groups,
        &DeltaConfig::default(),
    )?;
    println!(
        "20% of A flipped:  delta acc {:+.3} pts, dp {:+.4}, eo {:+.4}",
        r.delta_accuracy, r.delta_dp_diff, r.delta_eo_diff
    );
    Ok(())
}
