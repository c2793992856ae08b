//! The analyses as commands that read datasets and write report files.
//!
//! Each `cmd_*` function is one stage: it takes a loaded dataset (or a
//! simulator config) and writes its outputs into a directory, returning the
//! paths it wrote. [`cmd_pipeline`] runs every stage from a single TOML
//! config, passing data between stages through the files themselves, and
//! finishes with `manifest.json` (tool version, config hash, file hashes) and
//! `timings.json` (per-stage wall time). Everything except `timings.json` is
//! a deterministic function of the config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{
    audit_workers, bucket_table, default_bucket_edges, default_threshold_grid, domination_sweep,
    removal_impact, AuditOptions, SweepRow,
};
use crate::downstream::{
    delta_experiment, exponentiated_gradient, prejudice_remover, train_logistic, DeltaConfig,
    DeltaReport, ExpGradConfig, LogisticConfig,
};
use crate::error::{Error, Result};
use crate::fair_td::{fair_td_in, fair_td_post, fair_td_pre, ConstraintKind, FairnessConstraint};
use crate::io::{
    load_dataset, read_labels, write_dataset, write_json, write_labels, DatasetBundle, Table,
    ANNOTATIONS_FILE, TASKS_FILE,
};
use crate::logistic::LogisticModel;
use crate::metrics::{evaluate, fairness_report, FairnessMetric, FairnessReport, MetricOptions};
use crate::model::{Algorithm, TdResult};
use crate::simulate::{generate, SimConfig, SimDataset};
use crate::truth::{dawid_skene, learning_from_crowds, majority_vote, EmConfig};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes the dataset files plus `planted_workers.csv` and the resolved
/// `sim_config.toml`.
pub fn cmd_simulate(cfg: &SimConfig, out: &Path) -> Result<(SimDataset, Vec<PathBuf>)> {
    let data = generate(cfg)?;
    let (a, t) = write_dataset(&data.matrix, &data.tasks, out)?;

    let names = cfg.resolved_group_names();
    let mut columns = vec!["worker_id".to_string(), "planted_accuracy".to_string()];
    columns.extend(names.iter().map(|g| format!("sensitivity_{g}")));
    columns.extend(names.iter().map(|g| format!("specificity_{g}")));
    let mut table = Table::new(columns);
    for (w, ((sens, spec), acc)) in cfg
        .worker_coins()
        .into_iter()
        .zip(&data.planted_accuracy)
        .enumerate()
    {
        let mut row = vec![w.to_string(), crate::io::format_float(*acc)];
        row.extend(sens.iter().chain(spec).map(|&v| crate::io::format_float(v)));
        table.push(row);
    }
    let planted = out.join("planted_workers.csv");
    table.write_csv(&planted)?;

    let cfg_path = out.join("sim_config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok((data, vec![a, t, planted, cfg_path]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditSettings {
    pub threshold_grid: Vec<f64>,
    pub bucket_edges: Vec<f64>,
    pub options: AuditOptions,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            threshold_grid: default_threshold_grid(),
            bucket_edges: default_bucket_edges(),
            options: AuditOptions::default(),
        }
    }
}

#[derive(Serialize)]
struct MetricSweepRow<'a> {
    metric: &'static str,
    #[serde(flatten)]
    row: &'a SweepRow,
}

#[derive(Serialize)]
struct BucketCsvRow<'a> {
    accuracy_range: String,
    #[serde(flatten)]
    row: &'a crate::audit::BucketRow,
}

/// Worker reports, histograms, the accuracy-bucket table and both sweeps
/// (for `dp_diff` and `eo_diff`).
pub fn cmd_audit(
    bundle: &DatasetBundle,
    settings: &AuditSettings,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let (matrix, tasks) = (&bundle.matrix, &bundle.tasks);
    let audit = audit_workers(matrix, tasks, &settings.options)?;
    let mut written = Vec::new();

    let workers = out.join("workers.csv");
    Table::from_rows(&audit.reports)?.write_csv(&workers)?;
    written.push(workers);

    let hist = out.join("histograms.json");
    write_json(&audit.histograms, &hist)?;
    written.push(hist);

    let buckets = bucket_table(
        matrix,
        tasks,
        &audit.reports,
        &settings.bucket_edges,
        &settings.options.metric,
    )?;
    let rows: Vec<BucketCsvRow> = buckets
        .iter()
        .enumerate()
        .map(|(i, row)| BucketCsvRow {
            accuracy_range: format!(
                "{}{:.1}, {:.1}]",
                if i == 0 { "[" } else { "(" },
                row.lower,
                row.upper
            ),
            row,
        })
        .collect();
    let path = out.join("bucket_table.csv");
    Table::from_rows(&rows)?.write_csv(&path)?;
    written.push(path);

    let metrics = [FairnessMetric::DpDiff, FairnessMetric::EoDiff];
    let mut domination = Vec::new();
    let mut removal = Vec::new();
    for metric in metrics {
        domination.push((
            metric,
            domination_sweep(matrix, &audit.reports, metric, &settings.threshold_grid),
        ));
        removal.push((
            metric,
            removal_impact(
                matrix,
                tasks,
                &audit.reports,
                metric,
                &settings.threshold_grid,
            )?,
        ));
    }
    for (name, sweeps) in [
        ("sweep_domination.csv", &domination),
        ("sweep_removal.csv", &removal),
    ] {
        let rows: Vec<MetricSweepRow> = sweeps
            .iter()
            .flat_map(|(metric, rows)| {
                rows.iter().map(|row| MetricSweepRow {
                    metric: metric.name(),
                    row,
                })
            })
            .collect();
        let path = out.join(name);
        Table::from_rows(&rows)?.write_csv(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateSettings {
    pub algorithm: Algorithm,
    pub em: EmConfig,
    pub constraint: FairnessConstraint,
}

/// Runs one algorithm. Learning from crowds uses the task features when the
/// dataset has them; post-processing starts from Dawid-Skene and uses the
/// ground truth (required for equalized odds) when every task has one.
pub fn run_algorithm(bundle: &DatasetBundle, settings: &AggregateSettings) -> Result<TdResult> {
    let (matrix, tasks) = (&bundle.matrix, &bundle.tasks);
    let groups = tasks.groups();
    Ok(match settings.algorithm {
        Algorithm::Mv => majority_vote(matrix),
        Algorithm::Ds => dawid_skene(matrix, &settings.em)?.result,
        Algorithm::Lfc => learning_from_crowds(matrix, tasks.features(), &settings.em)?.result,
        Algorithm::FairTdPre => fair_td_pre(matrix, groups, &settings.constraint)?.result,
        Algorithm::FairTdIn => {
            fair_td_in(matrix, groups, &settings.constraint, &settings.em)?.result
        }
        Algorithm::FairTdPost => {
            let base = dawid_skene(matrix, &settings.em)?.result;
            let truth = tasks.require_truth("post-processing").ok();
            fair_td_post(&base, groups, &settings.constraint, truth.as_deref())?
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub algorithm: Algorithm,
    pub display_name: &'static str,
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: Option<f64>,
    pub constraint: Option<FairnessConstraint>,
    pub achieved_violation: Option<f64>,
    pub notes: Vec<String>,
    pub em: EmConfig,
    /// Scored against the ground truth where available.
    pub metrics: FairnessReport,
}

pub fn label_report(bundle: &DatasetBundle, labels: &[bool]) -> Result<FairnessReport> {
    let preds: Vec<Option<bool>> = labels.iter().copied().map(Some).collect();
    Ok(fairness_report(
        &preds,
        bundle.tasks.truth(),
        bundle.tasks.groups(),
        &MetricOptions::default(),
    )?
    .with_group_names(bundle.tasks.group_names()))
}

/// Writes `labels.csv` and `report.json`.
pub fn cmd_aggregate(
    bundle: &DatasetBundle,
    settings: &AggregateSettings,
    out: &Path,
) -> Result<(AggregateReport, Vec<PathBuf>)> {
    let result = run_algorithm(bundle, settings)?;
    let labels_path = out.join("labels.csv");
    write_labels(&bundle.matrix, &result, &labels_path)?;
    let report = AggregateReport {
        algorithm: result.algorithm,
        display_name: result.algorithm.display_name(),
        iterations: result.iterations,
        converged: result.converged,
        final_loglik: result.final_loglik,
        constraint: settings
            .algorithm
            .is_fairness_aware()
            .then_some(settings.constraint),
        achieved_violation: result.achieved_violation,
        notes: result.notes.clone(),
        em: settings.em,
        metrics: label_report(bundle, &result.labels)?,
    };
    let report_path = out.join("report.json");
    write_json(&report, &report_path)?;
    Ok((report, vec![labels_path, report_path]))
}

/// Runs the delta experiment for labels read from `labels_path` and writes
/// the report to `out`.
pub fn cmd_downstream(
    bundle: &DatasetBundle,
    labels_path: &Path,
    cfg: &DeltaConfig,
    out: &Path,
) -> Result<DeltaReport> {
    let td_labels = read_labels(labels_path, &bundle.matrix)?;
    let features = bundle.tasks.require_features("the downstream experiment")?;
    let truth = bundle.tasks.require_truth("the downstream experiment")?;
    let report = delta_experiment(features, &truth, &td_labels, bundle.tasks.groups(), cfg)?;
    write_json(&report, out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSettings {
    pub epsilon_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    /// Constraint for the fair truth-discovery series; the fair-ML
    /// baselines always target demographic parity.
    pub fairness: ConstraintKind,
    pub bases: Vec<Algorithm>,
    pub em: EmConfig,
    pub split_fraction: f64,
    pub seed: u64,
    pub logistic: LogisticConfig,
    pub expgrad: ExpGradConfig,
}

pub fn default_epsilon_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0]
}

pub fn default_eta_grid() -> Vec<f64> {
    vec![0.0, 0.1, 1.0, 10.0, 100.0]
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            epsilon_grid: default_epsilon_grid(),
            eta_grid: default_eta_grid(),
            fairness: ConstraintKind::Dp,
            bases: vec![Algorithm::Mv, Algorithm::Ds],
            em: EmConfig::default(),
            split_fraction: 0.5,
            seed: 0,
            logistic: LogisticConfig::default(),
            expgrad: ExpGradConfig::default(),
        }
    }
}

/// One point of the accuracy/fairness frontier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierRow {
    pub method: String,
    /// Truth-discovery algorithm whose labels were used.
    pub base: &'static str,
    /// `train` / `test` for classifiers; `labels` scores the aggregated
    /// labels themselves over all tasks.
    pub split: &'static str,
    /// Epsilon, or `1 / eta` for the prejudice remover (`inf` at `eta = 0`).
    pub constraint_value: f64,
    pub accuracy: Option<f64>,
    pub dp_diff: Option<f64>,
    pub eo_diff: Option<f64>,
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn pick<T: Clone>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i].clone()).collect()
}

fn compare_split(groups: &[usize], n_groups: usize, fraction: f64, seed: u64) -> Result<Split> {
    let n = groups.len();
    let n_train = ((n as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let test = order.split_off(n_train);
        let covers = |idx: &[usize]| {
            let mut seen = vec![false; n_groups];
            idx.iter().for_each(|&i| seen[groups[i]] = true);
            seen.into_iter().all(|s| s)
        };
        if covers(&order) && covers(&test) {
            return Ok(Split { train: order, test });
        }
    }
    Err(Error::InvalidInput(
        "no train/test split with every group on both sides in 20 attempts".into(),
    ))
}

/// Plain logistic fit, or a constant classifier when the training labels
/// contain one class only.
fn fit_or_constant(
    xs: &[Vec<f64>],
    labels: &[bool],
    cfg: &LogisticConfig,
) -> Result<LogisticModel> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        let dim = xs.first().map_or(0, Vec::len);
        return Ok(LogisticModel {
            weights: vec![0.0; dim],
            bias: if positives == 0 { -30.0 } else { 30.0 },
        });
    }
    train_logistic(xs, labels, cfg)
}

struct CompareData<'a> {
    features: &'a [Vec<f64>],
    truth: Vec<bool>,
    groups: &'a [usize],
    split: Split,
}

impl CompareData<'_> {
    fn rows(
        &self,
        method: &str,
        base: &'static str,
        value: f64,
        predict: &dyn Fn(&[usize]) -> Result<FairnessReport>,
    ) -> Result<Vec<FrontierRow>> {
        [("train", &self.split.train), ("test", &self.split.test)]
            .into_iter()
            .map(|(split, idx)| {
                let r = predict(idx)?;
                Ok(FrontierRow {
                    method: method.to_string(),
                    base,
                    split,
                    constraint_value: value,
                    accuracy: r.accuracy,
                    dp_diff: r.dp_diff,
                    eo_diff: r.eo_diff,
                })
            })
            .collect()
    }

    fn model_rows(
        &self,
        method: &str,
        base: &'static str,
        value: f64,
        model: &LogisticModel,
    ) -> Result<Vec<FrontierRow>> {
        self.rows(method, base, value, &|idx| {
            let preds = model.predict_all(&pick(self.features, idx));
            evaluate(&preds, &pick(&self.truth, idx), &pick(self.groups, idx))
        })
    }

    /// Labels row plus the classifier trained on the labels' train half.
    fn label_rows(
        &self,
        method: &str,
        base: &'static str,
        value: f64,
        labels: &[bool],
        cfg: &CompareSettings,
    ) -> Result<Vec<FrontierRow>> {
        let r = evaluate(labels, &self.truth, self.groups)?;
        let mut rows = vec![FrontierRow {
            method: method.to_string(),
            base,
            split: "labels",
            constraint_value: value,
            accuracy: r.accuracy,
            dp_diff: r.dp_diff,
            eo_diff: r.eo_diff,
        }];
        let xs = pick(self.features, &self.split.train);
        let model = fit_or_constant(&xs, &pick(labels, &self.split.train), &cfg.logistic)?;
        rows.extend(self.model_rows(method, base, value, &model)?);
        Ok(rows)
    }
}

/// Sweeps the fair truth-discovery variants, exponentiated gradient and the
/// prejudice remover over their constraint grids, on one seeded train/test
/// split, and writes the long-format `frontier.csv`.
pub fn cmd_fair_compare(
    bundle: &DatasetBundle,
    cfg: &CompareSettings,
    out: &Path,
) -> Result<Vec<FrontierRow>> {
    let (matrix, tasks) = (&bundle.matrix, &bundle.tasks);
    let data = CompareData {
        features: tasks.require_features("the fairness comparison")?,
        truth: tasks.require_truth("the fairness comparison")?,
        groups: tasks.groups(),
        split: compare_split(
            tasks.groups(),
            tasks.n_groups(),
            cfg.split_fraction,
            cfg.seed,
        )?,
    };
    let constraint = |eps: f64| FairnessConstraint {
        kind: cfg.fairness,
        epsilon: eps,
    };
    let mut jobs: Vec<Box<dyn Fn() -> Result<Vec<FrontierRow>> + Send + Sync + '_>> = Vec::new();

    for &eps in &cfg.epsilon_grid {
        let data = &data;
        jobs.push(Box::new(move || {
            let r = fair_td_pre(matrix, tasks.groups(), &constraint(eps))?.result;
            data.label_rows("fair-td-pre", "mv", eps, &r.labels, cfg)
        }));
        if cfg.fairness == ConstraintKind::Dp {
            jobs.push(Box::new(move || {
                let r = fair_td_in(matrix, tasks.groups(), &constraint(eps), &cfg.em)?.result;
                data.label_rows("fair-td-in", "ds", eps, &r.labels, cfg)
            }));
        }
    }
    for &base in &cfg.bases {
        let base_result = match base {
            Algorithm::Mv => majority_vote(matrix),
            Algorithm::Ds => dawid_skene(matrix, &cfg.em)?.result,
            Algorithm::Lfc => learning_from_crowds(matrix, tasks.features(), &cfg.em)?.result,
            other => {
                return Err(Error::InvalidInput(format!(
                    "comparison base must be mv, ds or lfc, got {}",
                    other.name()
                )))
            }
        };
        let base_name = base.name();
        let base_result = std::sync::Arc::new(base_result);
        let data = &data;
        for &eps in &cfg.epsilon_grid {
            let td = base_result.clone();
            jobs.push(Box::new(move || {
                let r = fair_td_post(&td, data.groups, &constraint(eps), Some(&data.truth))?;
                data.label_rows("fair-td-post", base_name, eps, &r.labels, cfg)
            }));
            let td = base_result.clone();
            jobs.push(Box::new(move || {
                let idx = &data.split.train;
                let fit = exponentiated_gradient(
                    &pick(data.features, idx),
                    &pick(&td.labels, idx),
                    &pick(data.groups, idx),
                    &FairnessConstraint::dp(eps),
                    &cfg.expgrad,
                )?;
                data.rows("expgrad", base_name, eps, &|idx| {
                    fit.classifier.report(
                        &pick(data.features, idx),
                        &pick(&data.truth, idx),
                        &pick(data.groups, idx),
                    )
                })
            }));
        }
        for &eta in &cfg.eta_grid {
            let td = base_result.clone();
            jobs.push(Box::new(move || {
                let idx = &data.split.train;
                let model = prejudice_remover(
                    &pick(data.features, idx),
                    &pick(&td.labels, idx),
                    &pick(data.groups, idx),
                    eta,
                    &cfg.logistic,
                )?;
                let value = if eta == 0.0 { f64::INFINITY } else { 1.0 / eta };
                data.model_rows("prejudice-remover", base_name, value, &model)
            }));
        }
    }

    let rows: Vec<FrontierRow> = jobs
        .par_iter()
        .map(|job| job())
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Table::from_rows(&rows)?.write_csv(out)?;
    Ok(rows)
}

/// Dataset location in a pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub annotations: PathBuf,
    pub tasks: PathBuf,
}

/// Full pipeline description. Exactly one of `dataset` and `simulation`
/// must be given; relative dataset paths are resolved against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub algorithms: Vec<String>,
    /// `dp` or `eo`.
    pub fairness: String,
    /// Budget for the fair truth-discovery runs of the aggregate stage.
    pub epsilon: f64,
    pub threshold_grid: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    pub repeats: usize,
    pub em: EmConfig,
    pub dataset: Option<DatasetPaths>,
    pub simulation: Option<SimConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            algorithms: Algorithm::ALL
                .iter()
                .map(|a| a.name().to_string())
                .collect(),
            fairness: "dp".into(),
            epsilon: 0.1,
            threshold_grid: default_threshold_grid(),
            epsilon_grid: default_epsilon_grid(),
            eta_grid: default_eta_grid(),
            repeats: 10,
            em: EmConfig::default(),
            dataset: None,
            simulation: None,
        }
    }
}

/// A config that passed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPipeline {
    pub config: PipelineConfig,
    pub algorithms: Vec<Algorithm>,
    pub fairness: ConstraintKind,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(ds), Some(dir)) = (cfg.dataset.as_mut(), path.parent()) {
            ds.annotations = dir.join(&ds.annotations);
            ds.tasks = dir.join(&ds.tasks);
        }
        Ok(cfg)
    }

    /// Checks everything before any work starts, reporting every problem.
    pub fn validate(&self) -> Result<ValidatedPipeline> {
        let mut problems = Vec::new();
        match (&self.dataset, &self.simulation) {
            (None, None) => {
                problems.push("either [dataset] or [simulation] is required".to_string())
            }
            (Some(_), Some(_)) => {
                problems.push("[dataset] and [simulation] are mutually exclusive".to_string())
            }
            (Some(ds), None) => {
                for p in [&ds.annotations, &ds.tasks] {
                    if !p.is_file() {
                        problems.push(format!("dataset file {} does not exist", p.display()));
                    }
                }
            }
            (None, Some(sim)) => {
                if let Err(Error::Config(list)) = sim.validate() {
                    problems.extend(list.into_iter().map(|p| format!("simulation: {p}")));
                }
            }
        }
        let mut algorithms = Vec::new();
        if self.algorithms.is_empty() {
            problems.push("algorithms is empty".to_string());
        }
        for name in &self.algorithms {
            match name.parse::<Algorithm>() {
                Ok(a) if !algorithms.contains(&a) => algorithms.push(a),
                Ok(_) => problems.push(format!("algorithm {name} listed twice")),
                Err(e) => problems.push(e.to_string()),
            }
        }
        let fairness = match self.fairness.parse::<ConstraintKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        };
        if fairness == Some(ConstraintKind::Eo) && algorithms.contains(&Algorithm::FairTdIn) {
            problems.push("fair-td-in supports fairness = \"dp\" only".to_string());
        }
        if !(self.epsilon >= 0.0) {
            problems.push(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        let check_grid = |name: &str, grid: &[f64], problems: &mut Vec<String>| {
            if grid.is_empty() {
                problems.push(format!("{name} is empty"));
            }
            if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                problems.push(format!("{name} values must be finite and >= 0"));
            }
        };
        check_grid("threshold_grid", &self.threshold_grid, &mut problems);
        check_grid("epsilon_grid", &self.epsilon_grid, &mut problems);
        check_grid("eta_grid", &self.eta_grid, &mut problems);
        if self.repeats == 0 {
            problems.push("repeats must be >= 1".to_string());
        }
        if let Err(Error::Config(list)) = self.em.validate() {
            problems.extend(list.into_iter().map(|p| format!("em: {p}")));
        }
        if problems.is_empty() {
            Ok(ValidatedPipeline {
                config: self.clone(),
                algorithms,
                fairness: fairness.expect("validated"),
            })
        } else {
            Err(Error::Config(problems))
        }
    }

    /// SHA-256 of the config's canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let text = toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))?;
        Ok(hex(&Sha256::digest(text.as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub stages: Vec<String>,
    /// Stages that could not run on this dataset, with the reason.
    pub skipped: Vec<String>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryRow {
    algorithm: &'static str,
    accuracy: Option<f64>,
    dp_diff: Option<f64>,
    dp_ratio: Option<f64>,
    eo_diff: Option<f64>,
    eo_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct DeltaRow {
    classifier: &'static str,
    algorithm: &'static str,
    delta_accuracy: f64,
    delta_dp_diff: f64,
    delta_eo_diff: f64,
}

fn relative(out: &Path, path: &Path) -> String {
    path.strip_prefix(out)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

struct Stages {
    timings: Vec<StageTiming>,
    names: Vec<String>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        eprintln!("[{name}] running");
        let start = Instant::now();
        let out = f()?;
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        self.names.push(name.to_string());
        Ok(out)
    }
}

/// Runs every stage into `out`:
///
/// * `data/` (simulated configs only): the generated dataset;
/// * `dataset.json`: dataset provenance;
/// * `audit/`: worker reports, histograms, bucket table, sweeps;
/// * `aggregate/<algorithm>/`: labels and report per algorithm, plus
///   `td_summary.csv` (one row per algorithm);
/// * `downstream/<algorithm>.json` and `delta_summary.csv`;
/// * `fair_compare/frontier.csv`;
/// * `manifest.json` and `timings.json`.
///
/// Stages that need ground truth or features are skipped, and listed in
/// the manifest, when the dataset lacks them.
pub fn cmd_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let valid = cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut stages = Stages {
        timings: Vec::new(),
        names: Vec::new(),
    };
    let mut skipped = Vec::new();
    let mut files: Vec<PathBuf> = Vec::new();

    let (annotations, task_file) = match (&cfg.dataset, &cfg.simulation) {
        (Some(ds), _) => (ds.annotations.clone(), ds.tasks.clone()),
        (None, Some(sim)) => {
            let dir = out.join("data");
            let (_, written) = stages.run("simulate", || cmd_simulate(sim, &dir))?;
            files.extend(written);
            (dir.join(ANNOTATIONS_FILE), dir.join(TASKS_FILE))
        }
        (None, None) => unreachable!("validated"),
    };
    let bundle = stages.run("load", || load_dataset(&annotations, &task_file))?;
    let mut provenance = bundle.provenance.clone();
    provenance.annotations_path = PathBuf::from(relative(out, &provenance.annotations_path));
    provenance.tasks_path = PathBuf::from(relative(out, &provenance.tasks_path));
    let prov_path = out.join("dataset.json");
    write_json(&provenance, &prov_path)?;
    files.push(prov_path);

    let full_truth = bundle.tasks.has_full_truth();
    let has_features = bundle.tasks.features().is_some();
    if full_truth {
        let settings = AuditSettings {
            threshold_grid: cfg.threshold_grid.clone(),
            ..AuditSettings::default()
        };
        let written = stages.run("audit", || {
            cmd_audit(&bundle, &settings, &out.join("audit"))
        })?;
        files.extend(written);
    } else {
        skipped.push("audit: some tasks have no ground truth".to_string());
    }

    let constraint = FairnessConstraint {
        kind: valid.fairness,
        epsilon: cfg.epsilon,
    };
    let mut summary = Vec::new();
    let mut label_files = Vec::new();
    for &algorithm in &valid.algorithms {
        let settings = AggregateSettings {
            algorithm,
            em: cfg.em,
            constraint,
        };
        let dir = out.join("aggregate").join(algorithm.name());
        let stage = format!("aggregate:{}", algorithm.name());
        let (report, written) = stages.run(&stage, || cmd_aggregate(&bundle, &settings, &dir))?;
        label_files.push((algorithm, written[0].clone()));
        files.extend(written);
        let m = &report.metrics;
        summary.push(SummaryRow {
            algorithm: algorithm.display_name(),
            accuracy: m.accuracy,
            dp_diff: m.dp_diff,
            dp_ratio: m.dp_ratio,
            eo_diff: m.eo_diff,
            eo_ratio: m.eo_ratio,
        });
    }
    let summary_path = out.join("aggregate").join("td_summary.csv");
    Table::from_rows(&summary)?.write_csv(&summary_path)?;
    files.push(summary_path);

    if full_truth && has_features {
        let delta_cfg = DeltaConfig {
            repeats: cfg.repeats,
            seed: cfg.seed,
            ..DeltaConfig::default()
        };
        let mut deltas = Vec::new();
        for (algorithm, labels_path) in &label_files {
            let path = out
                .join("downstream")
                .join(format!("{}.json", algorithm.name()));
            let stage = format!("downstream:{}", algorithm.name());
            let report = stages.run(&stage, || {
                cmd_downstream(&bundle, labels_path, &delta_cfg, &path)
            })?;
            files.push(path);
            deltas.push(DeltaRow {
                classifier: "Logistic Regression",
                algorithm: algorithm.display_name(),
                delta_accuracy: report.delta_accuracy,
                delta_dp_diff: report.delta_dp_diff,
                delta_eo_diff: report.delta_eo_diff,
            });
        }
        let path = out.join("downstream").join("delta_summary.csv");
        Table::from_rows(&deltas)?.write_csv(&path)?;
        files.push(path);

        let compare = CompareSettings {
            epsilon_grid: cfg.epsilon_grid.clone(),
            eta_grid: cfg.eta_grid.clone(),
            fairness: valid.fairness,
            em: cfg.em,
            seed: cfg.seed,
            ..CompareSettings::default()
        };
        let path = out.join("fair_compare").join("frontier.csv");
        stages.run("fair_compare", || {
            cmd_fair_compare(&bundle, &compare, &path)
        })?;
        files.push(path);
    } else {
        let reason = match (full_truth, has_features) {
            (false, false) => "no ground truth for some tasks and no task features",
            (false, true) => "some tasks have no ground truth",
            _ => "the dataset has no task features",
        };
        skipped.push(format!("downstream: {reason}"));
        skipped.push(format!("fair_compare: {reason}"));
    }

    let mut entries = files
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok(FileEntry {
                path: relative(out, p),
                bytes: bytes.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        config_sha256: cfg.hash()?,
        seed: cfg.seed,
        stages: stages.names.clone(),
        skipped,
        files: entries,
    };
    write_json(&manifest, &out.join("manifest.json"))?;
    write_json(&stages.timings, &out.join("timings.json"))?;
    Ok(manifest)
}
