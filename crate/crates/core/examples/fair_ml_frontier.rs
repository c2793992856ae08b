//! Exponentiated gradient and the prejudice remover on data whose features
//! reveal the group.
//!
//!     cargo run --release --example fair_ml_frontier

use crowdfair::downstream::{
    exponentiated_gradient, prejudice_remover, train_logistic, ExpGradConfig, LogisticConfig,
};
use crowdfair::fair_td::FairnessConstraint;
use crowdfair::metrics::evaluate;
use crowdfair::simulate::{generate, SimConfig};

fn main() -> crowdfair::Result<()> {
    let cfg = SimConfig {
        n_tasks: 800,
        base_rate: vec![0.7, 0.3],
        feature_dim: Some(2),
        seed: 1,
        ..SimConfig::default()
    };
    let data = generate(&cfg)?;
    let xs = data.tasks.require_features("this example")?;
    let y = data.tasks.require_truth("this example")?;
    let g = data.tasks.groups();
    let lc = LogisticConfig::default();

    let plain = evaluate(&train_logistic(xs, &y, &lc)?.predict_all(xs), &y, g)?;
    println!(
        "logistic regression      acc {:.3}  dp_diff {:.3}",
        plain.accuracy.unwrap(),
        plain.dp_diff.unwrap()
    );

    for eps in [0.2, 0.1, 0.05] {
        let fit = exponentiated_gradient(
            xs,
            &y,
            g,
            &FairnessConstraint::dp(eps),
            &ExpGradConfig::default(),
        )?;
        let r = fit.classifier.report(xs, &y, g)?;
        println!(
            "expgrad eps={eps:<5}        acc {:.3}  dp_diff {:.3}  ({} members)",
            r.accuracy.unwrap(),
            r.dp_diff.unwrap(),
            fit.classifier.members.len()
        );
    }
    for eta in [1.0, 10.0, 50.0] {
        let model = prejudice_remover(xs, &y, g, eta, &lc)?;
        let r = evaluate(&model.predict_all(xs), &y, g)?;
        println!(
            "prejudice remover eta={eta:<4} acc {:.3}  dp_diff {:.3}",
            r.accuracy.unwrap(),
            r.dp_diff.unwrap()
        );
    }
    Ok(())
}
