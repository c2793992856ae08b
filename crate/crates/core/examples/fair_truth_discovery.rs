//! Trade accuracy for demographic parity with the three fair
//! truth-discovery variants.
//!
//!     cargo run --example fair_truth_discovery

use crowdfair::fair_td::{fair_td_in, fair_td_post, fair_td_pre, FairnessConstraint};
use crowdfair::metrics::evaluate;
use crowdfair::simulate::{generate, SimConfig, WorkerSpec};
use crowdfair::truth::{dawid_skene, EmConfig};

fn main() -> crowdfair::Result<()> {
    // half the crowd rarely says "yes" to group B
    let cfg = SimConfig {
        n_tasks: 600,
        n_workers: 10,
        labels_per_task: 5,
        base_rate: vec![0.5, 0.5],
        worker_spec: vec![
            WorkerSpec::uniform(5, 2, 0.85, 0.85),
            WorkerSpec {
                count: 5,
                sensitivity: vec![0.9, 0.4],
                specificity: vec![0.85, 0.95],
            },
        ],
        seed: 8,
        ..SimConfig::default()
    };
    let data = generate(&cfg)?;
    let (m, groups) = (&data.matrix, data.tasks.groups());
    let truth = data.tasks.require_truth("this example")?;
    let em = EmConfig::default();
    let ds = dawid_skene(m, &em)?.result;

    println!("epsilon  variant  accuracy  dp_diff");
    for eps in [1.0, 0.2, 0.1, 0.05] {
        let c = FairnessConstraint::dp(eps);
        let runs = [
            ("pre ", fair_td_pre(m, groups, &c)?.result),
            ("in  ", fair_td_in(m, groups, &c, &em)?.result),
            ("post", fair_td_post(&ds, groups, &c, None)?),
        ];
        for (name, r) in runs {
            let rep = evaluate(&r.labels, &truth, groups)?;
            println!(
                "{eps:>7.2}  {name}     {:.4}    {:.4}",
                rep.accuracy.unwrap(),
                rep.dp_diff.unwrap()
            );
        }
    }
    Ok(())
}
