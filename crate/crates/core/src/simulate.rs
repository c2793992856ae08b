//! Synthetic crowds with known truth and planted, group-specific worker bias.
//!
//! Every worker answers with two coins per sensitive group: for a task of
//! group `g` with truth 1 they report 1 with probability `sensitivity[g]`,
//! and for truth 0 they report 0 with probability `specificity[g]`. Equal
//! coins across groups give a classic two-coin worker; different coins give
//! a worker who can be accurate overall while treating groups unequally.
//!
//! Generation per task, in order: group, truth, features, assigned workers,
//! labels. Features (when `feature_dim` is set) are unit-variance Gaussians
//! whose even coordinates are shifted by `FEATURE_SHIFT * truth` and odd
//! coordinates by `FEATURE_SHIFT * group_index`.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Annotation, AnnotationMatrix, TaskId, TaskTable, WorkerId};

pub const FEATURE_SHIFT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Each task gets `labels_per_task` distinct workers uniformly at random.
    #[default]
    Uniform,
    /// Consecutive blocks of `tasks_per_block` tasks are labeled by one fixed
    /// group of `labels_per_task` workers, cycling through worker groups.
    Block,
}

/// Coins for `count` identical workers, one entry per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    #[serde(default = "one")]
    pub count: usize,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
}

fn one() -> usize {
    1
}

impl WorkerSpec {
    pub fn uniform(count: usize, n_groups: usize, sensitivity: f64, specificity: f64) -> Self {
        Self {
            count,
            sensitivity: vec![sensitivity; n_groups],
            specificity: vec![specificity; n_groups],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_tasks: usize,
    pub n_workers: usize,
    pub labels_per_task: usize,
    #[serde(default)]
    pub group_names: Option<Vec<String>>,
    pub group_proportions: Vec<f64>,
    /// P(y = 1) per group.
    pub base_rate: Vec<f64>,
    pub worker_spec: Vec<WorkerSpec>,
    #[serde(default)]
    pub feature_dim: Option<usize>,
    #[serde(default)]
    pub assignment: Assignment,
    #[serde(default)]
    pub tasks_per_block: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tasks: 200,
            n_workers: 10,
            labels_per_task: 5,
            group_names: None,
            group_proportions: vec![0.5, 0.5],
            base_rate: vec![0.5, 0.5],
            worker_spec: vec![WorkerSpec::uniform(10, 2, 0.8, 0.8)],
            feature_dim: None,
            assignment: Assignment::Uniform,
            tasks_per_block: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub matrix: AnnotationMatrix,
    pub tasks: TaskTable,
    /// Expected accuracy of each worker under the configured group mix and
    /// base rates.
    pub planted_accuracy: Vec<f64>,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn n_groups(&self) -> usize {
        self.group_proportions.len()
    }

    pub fn resolved_group_names(&self) -> Vec<String> {
        match &self.group_names {
            Some(names) => names.clone(),
            None => (0..self.n_groups())
                .map(|g| {
                    if g < 26 {
                        ((b'A' + g as u8) as char).to_string()
                    } else {
                        format!("G{g:03}")
                    }
                })
                .collect(),
        }
    }

    /// Per-worker `(sensitivity, specificity)` vectors, expanded from the
    /// worker specs in order.
    pub fn worker_coins(&self) -> Vec<(&[f64], &[f64])> {
        self.worker_spec
            .iter()
            .flat_map(|s| std::iter::repeat_n((&s.sensitivity[..], &s.specificity[..]), s.count))
            .collect()
    }

    pub fn planted_accuracy(&self) -> Vec<f64> {
        self.worker_coins()
            .into_iter()
            .map(|(sens, spec)| {
                self.group_proportions
                    .iter()
                    .zip(&self.base_rate)
                    .enumerate()
                    .map(|(g, (pg, rate))| pg * (rate * sens[g] + (1.0 - rate) * spec[g]))
                    .sum()
            })
            .collect()
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let k = self.n_groups();
        let prob = |x: f64| (0.0..=1.0).contains(&x);

        if self.n_tasks == 0 {
            problems.push("n_tasks must be positive".to_string());
        }
        if self.n_workers == 0 {
            problems.push("n_workers must be positive".to_string());
        }
        if self.labels_per_task == 0 {
            problems.push("labels_per_task must be positive".to_string());
        }
        if self.labels_per_task > self.n_workers {
            problems.push(format!(
                "labels_per_task ({}) exceeds n_workers ({})",
                self.labels_per_task, self.n_workers
            ));
        }
        if k == 0 {
            problems.push("group_proportions is empty".to_string());
        }
        let total: f64 = self.group_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            problems.push(format!("group_proportions sum to {total}, expected 1"));
        }
        if self.group_proportions.iter().any(|&p| !prob(p)) {
            problems.push("group_proportions must lie in [0, 1]".to_string());
        }
        if self.base_rate.len() != k {
            problems.push(format!(
                "base_rate has {} entries for {k} groups",
                self.base_rate.len()
            ));
        }
        if self.base_rate.iter().any(|&p| !prob(p)) {
            problems.push("base_rate values must lie in [0, 1]".to_string());
        }
        if let Some(names) = &self.group_names {
            if names.len() != k {
                problems.push(format!(
                    "group_names has {} entries for {k} groups",
                    names.len()
                ));
            }
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != names.len() {
                problems.push("group_names must be distinct".to_string());
            }
        }
        let declared: usize = self.worker_spec.iter().map(|s| s.count).sum();
        if declared != self.n_workers {
            problems.push(format!(
                "worker_spec declares {declared} workers but n_workers is {}",
                self.n_workers
            ));
        }
        for (i, spec) in self.worker_spec.iter().enumerate() {
            if spec.sensitivity.len() != k || spec.specificity.len() != k {
                problems.push(format!(
                    "worker_spec[{i}] needs one sensitivity and specificity per group ({k})"
                ));
            }
            if spec
                .sensitivity
                .iter()
                .chain(&spec.specificity)
                .any(|&p| !prob(p))
            {
                problems.push(format!("worker_spec[{i}] coins must lie in [0, 1]"));
            }
        }
        if self.assignment == Assignment::Block {
            match self.tasks_per_block {
                None | Some(0) => {
                    problems.push("block assignment needs a positive tasks_per_block".to_string())
                }
                Some(_) => {}
            }
            if self.labels_per_task > 0 && self.n_workers % self.labels_per_task != 0 {
                problems.push(format!(
                    "block assignment needs n_workers ({}) divisible by labels_per_task ({})",
                    self.n_workers, self.labels_per_task
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

fn draw_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last group with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws a dataset; identical configs give identical datasets.
pub fn generate(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coins = cfg.worker_coins();
    let names = cfg.resolved_group_names();
    let k = cfg.labels_per_task;

    let mut groups = Vec::with_capacity(cfg.n_tasks);
    let mut truth = Vec::with_capacity(cfg.n_tasks);
    let mut features = cfg.feature_dim.map(|_| Vec::with_capacity(cfg.n_tasks));
    let mut entries = Vec::with_capacity(cfg.n_tasks * k);

    for t in 0..cfg.n_tasks {
        let g = draw_categorical(&mut rng, &cfg.group_proportions);
        let y = rng.random_bool(cfg.base_rate[g]);
        groups.push(g);
        truth.push(Some(y));

        if let (Some(dim), Some(rows)) = (cfg.feature_dim, features.as_mut()) {
            let x: Vec<f64> = (0..dim)
                .map(|j| {
                    let shift = if j % 2 == 0 { y as u8 as f64 } else { g as f64 };
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + FEATURE_SHIFT * shift
                })
                .collect();
            rows.push(x);
        }

        let workers: Vec<usize> = match cfg.assignment {
            Assignment::Uniform => sample(&mut rng, cfg.n_workers, k).into_vec(),
            Assignment::Block => {
                let block = t / cfg.tasks_per_block.expect("validated");
                let crew = block % (cfg.n_workers / k);
                (crew * k..(crew + 1) * k).collect()
            }
        };
        for w in workers {
            let (sens, spec) = coins[w];
            let label = if y {
                rng.random_bool(sens[g])
            } else {
                !rng.random_bool(spec[g])
            };
            entries.push(Annotation {
                task: TaskId(t),
                worker: WorkerId(w),
                label,
            });
        }
    }

    let matrix = AnnotationMatrix::from_dense(cfg.n_tasks, cfg.n_workers, entries)?;
    let group_labels = groups.iter().map(|&g| names[g].clone()).collect();
    let tasks = TaskTable::new(group_labels, truth, features)?;
    Ok(SimDataset {
        matrix,
        tasks,
        planted_accuracy: cfg.planted_accuracy(),
    })
}
