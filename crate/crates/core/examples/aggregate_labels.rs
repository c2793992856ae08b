//! Majority vote, Dawid-Skene and learning-from-crowds on a crowd whose
//! workers range from near-random to very reliable.
//!
//!     cargo run --example aggregate_labels

use crowdfair::metrics::evaluate;
use crowdfair::simulate::{generate, SimConfig, WorkerSpec};
use crowdfair::truth::{dawid_skene, learning_from_crowds, majority_vote, EmConfig};

fn main() -> crowdfair::Result<()> {
    let worker_spec = (0..15)
        .map(|j| {
            let acc = 0.55 + 0.4 * j as f64 / 14.0;
            WorkerSpec::uniform(1, 2, acc, acc)
        })
        .collect();
    let cfg = SimConfig {
        n_tasks: 1500,
        n_workers: 15,
        labels_per_task: 7,
        base_rate: vec![0.4, 0.6],
        worker_spec,
        seed: 5,
        ..SimConfig::default()
    };
    let data = generate(&cfg)?;
    let truth = data.tasks.require_truth("this example")?;
    let groups = data.tasks.groups();
    let em = EmConfig::default();

    let ds = dawid_skene(&data.matrix, &em)?;
    let results = [
        majority_vote(&data.matrix),
        ds.result.clone(),
        learning_from_crowds(&data.matrix, None, &em)?.result,
    ];
    for r in &results {
        let report = evaluate(&r.labels, &truth, groups)?;
        println!(
            "{:<22} accuracy {:.4}  dp_diff {:.4}  iterations {}",
            r.algorithm.display_name(),
            report.accuracy.unwrap(),
            report.dp_diff.unwrap(),
            r.iterations
        );
    }

    println!("\nDawid-Skene estimate vs planted accuracy (first five workers)");
    for (w, planted) in data.planted_accuracy.iter().enumerate().take(5) {
        let est = ds.params.confusion[w].accuracy(ds.params.prior);
        println!("  worker {w}: {est:.3} vs {planted:.3}");
    }
    Ok(())
}
