use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdfair::audit::{default_threshold_grid, AuditOptions};
use crowdfair::downstream::DeltaConfig;
use crowdfair::fair_td::{ConstraintKind, FairnessConstraint};
use crowdfair::io::{load_dataset, DatasetBundle};
use crowdfair::model::Algorithm;
use crowdfair::pipeline::{
    cmd_aggregate, cmd_audit, cmd_downstream, cmd_fair_compare, cmd_pipeline, cmd_simulate,
    default_epsilon_grid, default_eta_grid, AggregateSettings, AuditSettings, CompareSettings,
    PipelineConfig,
};
use crowdfair::simulate::SimConfig;
use crowdfair::truth::EmConfig;
use crowdfair::{Error, Result};

/// Truth discovery and fairness auditing for crowd-labeled data.
#[derive(Parser)]
#[command(name = "crowdfair", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Dataset {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
}

impl Dataset {
    fn load(&self) -> Result<DatasetBundle> {
        load_dataset(&self.annotations, &self.tasks)
    }
}

#[derive(Args)]
struct Em {
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0.01)]
    smoothing: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-worker reports, histograms, bucket table and unfair-worker sweeps.
    Audit {
        #[command(flatten)]
        dataset: Dataset,
        #[arg(long, value_delimiter = ',')]
        threshold_grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate labels with one algorithm and score them.
    Aggregate {
        #[command(flatten)]
        dataset: Dataset,
        /// mv, ds, lfc, fair-td-pre, fair-td-in or fair-td-post.
        #[arg(long, default_value = "mv")]
        algorithm: String,
        /// dp or eo.
        #[arg(long, default_value = "dp")]
        fairness: String,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[command(flatten)]
        em: Em,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on ground truth vs aggregated labels and report the differences.
    Downstream {
        #[command(flatten)]
        dataset: Dataset,
        /// labels.csv written by `aggregate`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy/fairness frontier of fair truth discovery vs fair ML.
    FairCompare {
        #[command(flatten)]
        dataset: Dataset,
        #[arg(long, default_value = "dp")]
        fairness: String,
        #[arg(long, value_delimiter = ',')]
        epsilon_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        eta_grid: Option<Vec<f64>>,
        #[command(flatten)]
        em: Em,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from a pipeline config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn em_config(em: &Em, seed: u64) -> Result<EmConfig> {
    let cfg = EmConfig {
        max_iter: em.max_iter,
        tol: em.tol,
        smoothing: em.smoothing,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let v = crowdfair::io::to_report_json(value)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&v).map_err(|e| Error::Serialize(e.to_string()))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(vec![format!("--threads: {e}")]))?;
    }
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = SimConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (data, written) = cmd_simulate(&cfg, &out)?;
            eprintln!(
                "simulated {} tasks, {} workers, {} labels",
                data.matrix.n_tasks(),
                data.matrix.n_workers(),
                data.matrix.n_entries()
            );
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Audit {
            dataset,
            threshold_grid,
            bins,
            out,
        } => {
            let bundle = dataset.load()?;
            let settings = AuditSettings {
                threshold_grid: threshold_grid.unwrap_or_else(default_threshold_grid),
                options: AuditOptions {
                    bins,
                    ..AuditOptions::default()
                },
                ..AuditSettings::default()
            };
            create_dir(&out)?;
            for p in cmd_audit(&bundle, &settings, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Aggregate {
            dataset,
            algorithm,
            fairness,
            epsilon,
            em,
            seed,
            out,
        } => {
            let algorithm: Algorithm = algorithm.parse()?;
            let kind: ConstraintKind = fairness.parse()?;
            let settings = AggregateSettings {
                algorithm,
                em: em_config(&em, seed)?,
                constraint: FairnessConstraint { kind, epsilon },
            };
            settings.constraint.validate()?;
            let bundle = dataset.load()?;
            create_dir(&out)?;
            let (report, _) = cmd_aggregate(&bundle, &settings, &out)?;
            eprintln!(
                "{}: {} iteration(s), converged: {}",
                report.display_name, report.iterations, report.converged
            );
            print_json(&report.metrics)?;
        }
        Command::Downstream {
            dataset,
            labels,
            repeats,
            seed,
            out,
        } => {
            let bundle = dataset.load()?;
            let cfg = DeltaConfig {
                repeats,
                seed,
                ..DeltaConfig::default()
            };
            create_dir(&out)?;
            let report = cmd_downstream(&bundle, &labels, &cfg, &out.join("delta.json"))?;
            eprintln!(
                "delta accuracy {:.3} points, delta dp_diff {:.4}, delta eo_diff {:.4}",
                report.delta_accuracy, report.delta_dp_diff, report.delta_eo_diff
            );
        }
        Command::FairCompare {
            dataset,
            fairness,
            epsilon_grid,
            eta_grid,
            em,
            seed,
            out,
        } => {
            let cfg = CompareSettings {
                epsilon_grid: epsilon_grid.unwrap_or_else(default_epsilon_grid),
                eta_grid: eta_grid.unwrap_or_else(default_eta_grid),
                fairness: fairness.parse()?,
                em: em_config(&em, seed)?,
                seed,
                ..CompareSettings::default()
            };
            let bundle = dataset.load()?;
            create_dir(&out)?;
            let rows = cmd_fair_compare(&bundle, &cfg, &out.join("frontier.csv"))?;
            eprintln!("{} frontier rows", rows.len());
        }
        Command::Pipeline { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let manifest = cmd_pipeline(&cfg, &out)?;
            eprintln!(
                "{} files written to {}",
                manifest.files.len(),
                out.display()
            );
            for s in &manifest.skipped {
                eprintln!("skipped {s}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
