//! Write a dataset in the two-file CSV layout, load it back, and write a
//! report as JSON and CSV.
//!
//!     cargo run --example dataset_io

use crowdfair::io::{load_dataset, write_dataset, write_report, ReportFormat};
use crowdfair::metrics::{fairness_report, MetricOptions};
use crowdfair::simulate::{generate, SimConfig};
use crowdfair::truth::majority_vote;

fn main() -> crowdfair::Result<()> {
    let dir = std::env::temp_dir().join("crowdfair-dataset-io");
    let data = generate(&SimConfig {
        feature_dim: Some(2),
        ..SimConfig::default()
    })?;
    let (annotations, tasks) = write_dataset(&data.matrix, &data.tasks, &dir)?;
    let bundle = load_dataset(&annotations, &tasks)?;
    assert_eq!(bundle.matrix, data.matrix);
    assert_eq!(bundle.tasks, data.tasks);
    println!("round trip ok: {:?}", bundle.provenance);

    let mv = majority_vote(&bundle.matrix);
    let preds: Vec<Option<bool>> = mv.labels.iter().copied().map(Some).collect();
    let report = fairness_report(
        &preds,
        bundle.tasks.truth(),
        bundle.tasks.groups(),
        &MetricOptions::default(),
    )?
    .with_group_names(bundle.tasks.group_names());
    write_report(&report, &dir.join("mv_report.json"), ReportFormat::Json)?;
    write_report(&report, &dir.join("mv_report.csv"), ReportFormat::Csv)?;
    println!(
        "{}",
        std::fs::read_to_string(dir.join("mv_report.csv")).unwrap()
    );
    println!("files in {}", dir.display());
    Ok(())
}
