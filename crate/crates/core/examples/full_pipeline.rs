//! Every analysis from one config: simulate, audit, aggregate with all six
//! algorithms, downstream deltas and the fairness frontier.
//!
//!     cargo run --release --example full_pipeline [-- OUT_DIR]

use std::path::PathBuf;

use crowdfair::pipeline::{cmd_pipeline, PipelineConfig};

const CONFIG: &str = r#"
seed = 3
repeats = 5
epsilon = 0.1
epsilon_grid = [0.05, 0.1, 0.2, 1.0]
eta_grid = [0.0, 1.0, 10.0]

[simulation]
n_tasks = 1000
n_workers = 20
labels_per_task = 5
group_proportions = [0.5, 0.5]
base_rate = [0.6, 0.4]
feature_dim = 4
seed = 3

[[simulation.worker_spec]]
count = 14
sensitivity = [0.8, 0.8]
specificity = [0.8, 0.8]

[[simulation.worker_spec]]
count = 6
sensitivity = [0.9, 0.8]
specificity = [0.95, 0.6]
"#;

fn main() -> crowdfair::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("crowdfair-pipeline"));
    let cfg = PipelineConfig::from_toml_str(CONFIG)?;
    let manifest = cmd_pipeline(&cfg, &out)?;
    for f in &manifest.files {
        println!("{:>9}  {}", f.bytes, f.path);
    }
    println!(
        "\n{}",
        std::fs::read_to_string(out.join("aggregate/td_summary.csv")).unwrap()
    );
    println!(
        "{}",
        std::fs::read_to_string(out.join("downstream/delta_summary.csv")).unwrap()
    );
    Ok(())
}
