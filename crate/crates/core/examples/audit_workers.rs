//! Audit individual workers: accuracy vs fairness, the accuracy-bucket
//! table, and what happens to majority vote when unfair workers are dropped.
//!
//!     cargo run --example audit_workers

use crowdfair::audit::{
    audit_workers, bucket_table, default_bucket_edges, default_threshold_grid, domination_sweep,
    removal_impact, AuditOptions,
};
use crowdfair::metrics::{FairnessMetric, MetricOptions};
use crowdfair::simulate::{generate, SimConfig, WorkerSpec};

fn fmt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v:.3}"))
}

fn main() -> crowdfair::Result<()> {
    let cfg = SimConfig {
        n_tasks: 800,
        n_workers: 20,
        labels_per_task: 5,
        worker_spec: vec![
            WorkerSpec::uniform(12, 2, 0.8, 0.8),
            WorkerSpec {
                count: 8,
                sensitivity: vec![0.95, 0.95],
                specificity: vec![0.95, 0.6],
            },
        ],
        seed: 2,
        ..SimConfig::default()
    };
    let data = generate(&cfg)?;
    let (m, t) = (&data.matrix, &data.tasks);
    let audit = audit_workers(m, t, &AuditOptions::default())?;

    let accurate_unfair = audit
        .reports
        .iter()
        .filter(|r| r.report.accuracy >= Some(0.75) && r.report.dp_diff >= Some(0.2))
        .count();
    println!("{accurate_unfair} workers are accurate (>= 0.75) yet unfair (dp_diff >= 0.2)\n");

    println!("accuracy bucket   workers  dp_diff  eo_diff");
    let buckets = bucket_table(
        m,
        t,
        &audit.reports,
        &default_bucket_edges(),
        &MetricOptions::default(),
    )?;
    for b in buckets {
        println!(
            "({:.1}, {:.1}]        {:>7}  {:>7}  {:>7}",
            b.lower,
            b.upper,
            b.n_workers,
            fmt(b.dp_diff),
            fmt(b.eo_diff)
        );
    }

    let grid = default_threshold_grid();
    let dom = domination_sweep(m, &audit.reports, FairnessMetric::DpDiff, &grid);
    let rem = removal_impact(m, t, &audit.reports, FairnessMetric::DpDiff, &grid)?;
    println!("\nthreshold  dominated  mv_acc_after_removal  tasks_left");
    for (d, r) in dom.iter().zip(&rem) {
        println!(
            "{:>9.1}  {:>9.3}  {:>20}  {:>10}",
            d.threshold,
            d.dominated_fraction,
            fmt(r.acc_after_removal),
            r.tasks_remaining.unwrap_or(0)
        );
    }
    Ok(())
}
