//! Generate a crowd with a few group-biased workers and compare each
//! worker's planted accuracy with what the generated labels show.
//!
//!     cargo run --example simulate_crowd

use crowdfair::audit::{audit_workers, AuditOptions};
use crowdfair::simulate::{generate, SimConfig, WorkerSpec};

fn main() -> crowdfair::Result<()> {
    let cfg = SimConfig {
        n_tasks: 1000,
        n_workers: 12,
        labels_per_task: 5,
        base_rate: vec![0.5, 0.5],
        worker_spec: vec![
            WorkerSpec::uniform(8, 2, 0.85, 0.85),
            // accurate on group A, much harsher on group B
            WorkerSpec {
                count: 4,
                sensitivity: vec![0.9, 0.9],
                specificity: vec![0.95, 0.6],
            },
        ],
        seed: 11,
        ..SimConfig::default()
    };
    let data = generate(&cfg)?;
    println!(
        "{} tasks, {} workers, {} labels",
        data.matrix.n_tasks(),
        data.matrix.n_workers(),
        data.matrix.n_entries()
    );

    let audit = audit_workers(&data.matrix, &data.tasks, &AuditOptions::default())?;
    println!("worker  planted  measured  dp_diff");
    for (r, planted) in audit.reports.iter().zip(&data.planted_accuracy) {
        println!(
            "{:>6}  {planted:>7.3}  {:>8.3}  {:>7.3}",
            r.worker_id,
            r.report.accuracy.unwrap_or(f64::NAN),
            r.report.dp_diff.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
