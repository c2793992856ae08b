//! Dataset files and report serialization.
//!
//! A dataset is two CSV files:
//!
//! * annotations: `task_id,worker_id,label`, one row per answer;
//! * tasks: `task_id,group,truth[,feat_0,...,feat_{d-1}]`, one row per task,
//!   with a blank `truth` for unknown ground truth.
//!
//! Ids are unsigned integers. Dense indices follow the ascending order of
//! the external ids, so the loaded bundle does not depend on row order.
//!
//! Reports are written as JSON (with a `schema_version` field) or CSV.
//! Floats are rounded to 6 significant digits and missing values become
//! `null` in JSON and `NA` in CSV.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{AnnotationMatrix, TaskTable, TdResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const TASKS_FILE: &str = "tasks.csv";
pub const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub annotations_path: PathBuf,
    pub tasks_path: PathBuf,
    pub annotation_rows: usize,
    /// Repeated identical `(task, worker, label)` rows, kept once.
    pub duplicate_rows: usize,
    pub task_rows: usize,
    pub n_tasks: usize,
    pub n_workers: usize,
    pub n_groups: usize,
    pub n_with_truth: usize,
    pub feature_dim: Option<usize>,
    /// How external ids map to dense indices.
    pub id_mapping: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub matrix: AnnotationMatrix,
    pub tasks: TaskTable,
    pub provenance: Provenance,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Ingest(format!("{}: {e}", path.display())),
        csv::ErrorKind::Utf8 { .. } => parse_err(path, line, "invalid UTF-8"),
        _ => parse_err(path, line, e.to_string()),
    }
}

fn headers(path: &Path, reader: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let h = reader.headers().map_err(|e| csv_error(path, e))?;
    Ok(h.iter().map(str::to_string).collect())
}

fn parse_id(path: &Path, line: u64, column: &str, raw: &str) -> Result<u64> {
    raw.parse().map_err(|_| {
        parse_err(
            path,
            line,
            format!("{column} {raw:?} is not an unsigned integer"),
        )
    })
}

fn parse_binary(path: &Path, line: u64, column: &str, raw: &str) -> Result<bool> {
    match raw {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(parse_err(
            path,
            line,
            format!("{column} {raw:?} is not 0 or 1"),
        )),
    }
}

struct TaskRow {
    line: u64,
    group: String,
    truth: Option<bool>,
    features: Vec<f64>,
}

fn read_tasks(path: &Path) -> Result<(BTreeMap<u64, TaskRow>, Option<usize>, usize)> {
    let mut reader = csv_reader(path)?;
    let cols = headers(path, &mut reader)?;
    if cols.len() < 3 || cols[0] != "task_id" || cols[1] != "group" || cols[2] != "truth" {
        return Err(parse_err(
            path,
            1,
            format!(
                "header must start with task_id,group,truth, found {}",
                cols.join(",")
            ),
        ));
    }
    let dim = cols.len() - 3;
    for (j, name) in cols[3..].iter().enumerate() {
        if *name != format!("feat_{j}") {
            return Err(parse_err(
                path,
                1,
                format!("expected column feat_{j}, found {name:?}"),
            ));
        }
    }
    let mut rows = BTreeMap::new();
    let mut n_rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        n_rows += 1;
        if record.len() != cols.len() {
            return Err(parse_err(
                path,
                line,
                format!(
                    "{} fields, expected {} ({} features)",
                    record.len(),
                    cols.len(),
                    dim
                ),
            ));
        }
        let id = parse_id(path, line, "task_id", &record[0])?;
        let group = record[1].to_string();
        if group.is_empty() {
            return Err(parse_err(path, line, "group is empty"));
        }
        let truth = match &record[2] {
            "" => None,
            raw => Some(parse_binary(path, line, "truth", raw)?),
        };
        let features = (3..record.len())
            .map(|j| {
                record[j]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(
                            path,
                            line,
                            format!("{} {:?} is not a finite number", cols[j], &record[j]),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let row = TaskRow {
            line,
            group,
            truth,
            features,
        };
        if let Some(prev) = rows.insert(id, row) {
            return Err(parse_err(
                path,
                line,
                format!("task_id {id} already defined on line {}", prev.line),
            ));
        }
    }
    if rows.is_empty() {
        return Err(Error::Ingest(format!("{}: no task rows", path.display())));
    }
    Ok((rows, (dim > 0).then_some(dim), n_rows))
}

/// Loads and validates a dataset. Every malformed row is reported with its
/// file and line.
pub fn load_dataset(annotations_path: &Path, tasks_path: &Path) -> Result<DatasetBundle> {
    let (task_rows, feature_dim, n_task_rows) = read_tasks(tasks_path)?;

    let path = annotations_path;
    let mut reader = csv_reader(path)?;
    let cols = headers(path, &mut reader)?;
    if cols != ["task_id", "worker_id", "label"] {
        return Err(parse_err(
            path,
            1,
            format!(
                "header must be task_id,worker_id,label, found {}",
                cols.join(",")
            ),
        ));
    }
    let mut answers: BTreeMap<(u64, u64), (bool, u64)> = BTreeMap::new();
    let mut annotation_rows = 0;
    let mut duplicate_rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        annotation_rows += 1;
        if record.len() != 3 {
            return Err(parse_err(
                path,
                line,
                format!("{} fields, expected 3", record.len()),
            ));
        }
        let task = parse_id(path, line, "task_id", &record[0])?;
        let worker = parse_id(path, line, "worker_id", &record[1])?;
        let label = parse_binary(path, line, "label", &record[2])?;
        if !task_rows.contains_key(&task) {
            return Err(parse_err(
                path,
                line,
                format!("task_id {task} is not in {}", tasks_path.display()),
            ));
        }
        match answers.get(&(task, worker)) {
            Some(&(prev, prev_line)) if prev != label => {
                return Err(parse_err(
                    path,
                    line,
                    format!("worker {worker} labels task {task} differently on line {prev_line}"),
                ))
            }
            Some(_) => duplicate_rows += 1,
            None => {
                answers.insert((task, worker), (label, line));
            }
        }
    }
    for (id, row) in &task_rows {
        if answers.range((*id, 0)..=(*id, u64::MAX)).next().is_none() {
            return Err(parse_err(
                tasks_path,
                row.line,
                format!("task_id {id} has no annotations"),
            ));
        }
    }

    let rows: Vec<(u64, u64, u8)> = answers
        .iter()
        .map(|(&(t, w), &(l, _))| (t, w, l as u8))
        .collect();
    let matrix = AnnotationMatrix::from_rows(&rows)?;
    // matrix task order is ascending external id, as is the BTreeMap's
    let mut groups = Vec::with_capacity(task_rows.len());
    let mut truth = Vec::with_capacity(task_rows.len());
    let mut features = feature_dim.map(|_| Vec::with_capacity(task_rows.len()));
    for row in task_rows.into_values() {
        groups.push(row.group);
        truth.push(row.truth);
        if let Some(f) = features.as_mut() {
            f.push(row.features);
        }
    }
    let tasks = TaskTable::new(groups, truth, features)?;
    let provenance = Provenance {
        annotations_path: annotations_path.to_path_buf(),
        tasks_path: tasks_path.to_path_buf(),
        annotation_rows,
        duplicate_rows,
        task_rows: n_task_rows,
        n_tasks: matrix.n_tasks(),
        n_workers: matrix.n_workers(),
        n_groups: tasks.n_groups(),
        n_with_truth: tasks.truth().iter().filter(|t| t.is_some()).count(),
        feature_dim,
        id_mapping: "dense indices in ascending external-id order",
    };
    Ok(DatasetBundle {
        matrix,
        tasks,
        provenance,
    })
}

fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?))
}

fn write_record<I, S>(path: &Path, w: &mut csv::Writer<File>, record: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(record)
        .map_err(|e| Error::Serialize(format!("{}: {e}", path.display())))
}

fn flush(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `annotations.csv` and `tasks.csv` into `dir`. Features keep full
/// precision so that loading the files back gives an identical bundle.
pub fn write_dataset(
    matrix: &AnnotationMatrix,
    tasks: &TaskTable,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if tasks.len() != matrix.n_tasks() {
        return Err(Error::InvalidInput(format!(
            "task table has {} rows for {} tasks",
            tasks.len(),
            matrix.n_tasks()
        )));
    }
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let mut w = csv_writer(&ann_path)?;
    write_record(&ann_path, &mut w, ["task_id", "worker_id", "label"])?;
    for (t, worker, label) in matrix.to_rows() {
        write_record(
            &ann_path,
            &mut w,
            [t.to_string(), worker.to_string(), label.to_string()],
        )?;
    }
    flush(&ann_path, w)?;

    let task_path = dir.join(TASKS_FILE);
    let mut w = csv_writer(&task_path)?;
    let dim = tasks.feature_dim().unwrap_or(0);
    let header: Vec<String> = ["task_id", "group", "truth"]
        .into_iter()
        .map(String::from)
        .chain((0..dim).map(|j| format!("feat_{j}")))
        .collect();
    write_record(&task_path, &mut w, &header)?;
    for t in 0..tasks.len() {
        let mut row = vec![
            matrix.task_ids()[t].to_string(),
            tasks.group_names()[tasks.groups()[t]].clone(),
            tasks.truth()[t].map_or(String::new(), |v| (v as u8).to_string()),
        ];
        if let Some(f) = tasks.features() {
            row.extend(f[t].iter().map(|v| v.to_string()));
        }
        write_record(&task_path, &mut w, &row)?;
    }
    flush(&task_path, w)?;
    Ok((ann_path, task_path))
}

/// Writes `task_id,label,posterior` for a truth-discovery result.
pub fn write_labels(matrix: &AnnotationMatrix, result: &TdResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_record(path, &mut w, ["task_id", "label", "posterior"])?;
    for (t, (&label, &p)) in result.labels.iter().zip(&result.posteriors).enumerate() {
        write_record(
            path,
            &mut w,
            [
                matrix.task_ids()[t].to_string(),
                (label as u8).to_string(),
                format_float(p),
            ],
        )?;
    }
    flush(path, w)
}

/// Reads a labels file and aligns it with `matrix`'s tasks. Every task must
/// appear exactly once.
pub fn read_labels(path: &Path, matrix: &AnnotationMatrix) -> Result<Vec<bool>> {
    let mut reader = csv_reader(path)?;
    let cols = headers(path, &mut reader)?;
    if cols.len() < 2 || cols[0] != "task_id" || cols[1] != "label" {
        return Err(parse_err(
            path,
            1,
            format!(
                "header must start with task_id,label, found {}",
                cols.join(",")
            ),
        ));
    }
    let mut labels: Vec<Option<bool>> = vec![None; matrix.n_tasks()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(parse_err(path, line, "missing label field"));
        }
        let id = parse_id(path, line, "task_id", &record[0])?;
        let label = parse_binary(path, line, "label", &record[1])?;
        let t = matrix
            .task_index(id)
            .ok_or_else(|| parse_err(path, line, format!("task_id {id} is not in the dataset")))?;
        if labels[t.0].replace(label).is_some() {
            return Err(parse_err(path, line, format!("task_id {id} appears twice")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(t, l)| {
            l.ok_or_else(|| {
                Error::Ingest(format!(
                    "{}: no label for task_id {}",
                    path.display(),
                    matrix.task_ids()[t]
                ))
            })
        })
        .collect()
}

/// Rounds to 6 significant digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

/// Report rendering of a float: 6 significant digits, shortest form.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        NA.to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        let r = round_sig(v);
        // avoid "-0"
        if r == 0.0 {
            "0".to_string()
        } else {
            r.to_string()
        }
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round_sig(f)).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// JSON rendering of a report: rounded floats, `schema_version` first.
/// Non-object values are wrapped as `{"schema_version": .., "data": ..}`.
pub fn to_report_json<T: Serialize + ?Sized>(report: &T) -> Result<Value> {
    let mut value = serde_json::to_value(report).map_err(|e| Error::Serialize(e.to_string()))?;
    round_value(&mut value);
    let mut out = Map::new();
    out.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    match value {
        Value::Object(map) => out.extend(map),
        other => {
            out.insert("data".into(), other);
        }
    }
    Ok(Value::Object(out))
}

pub fn write_json<T: Serialize + ?Sized>(report: &T, path: &Path) -> Result<()> {
    let value = to_report_json(report)?;
    let mut text =
        serde_json::to_string_pretty(&value).map_err(|e| Error::Serialize(e.to_string()))?;
    text.push('\n');
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A rectangular report: named columns, rendered cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => NA.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format_float(f),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Scalar fields of an object, nested objects flattened in place; arrays
/// are skipped.
fn flatten(prefix: Option<&str>, map: &Map<String, Value>, out: &mut Vec<(String, Value)>) {
    for (k, v) in map {
        match v {
            Value::Object(inner) => flatten(Some(k), inner, out),
            Value::Array(_) => {}
            _ => {
                let name = match prefix {
                    Some(p) if out.iter().any(|(n, _)| n == k) => format!("{p}.{k}"),
                    _ => k.clone(),
                };
                out.push((name, v.clone()));
            }
        }
    }
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    /// One row per item, columns from the first item's scalar fields.
    pub fn from_rows<T: Serialize>(items: &[T]) -> Result<Self> {
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::with_capacity(items.len());
        for item in items {
            let value = serde_json::to_value(item).map_err(|e| Error::Serialize(e.to_string()))?;
            let Value::Object(map) = value else {
                return Err(Error::Serialize(
                    "table rows must serialize as objects".into(),
                ));
            };
            let mut fields = Vec::new();
            flatten(None, &map, &mut fields);
            let names: Vec<String> = fields.iter().map(|(n, _)| n.clone()).collect();
            match &columns {
                None => columns = Some(names),
                Some(c) if *c != names => {
                    return Err(Error::Serialize("table rows have differing fields".into()))
                }
                _ => {}
            }
            rows.push(fields.iter().map(|(_, v)| cell(v)).collect());
        }
        Ok(Self {
            columns: columns.unwrap_or_default(),
            rows,
        })
    }

    /// A single-row table of an object's scalar fields.
    pub fn from_record<T: Serialize>(item: &T) -> Result<Self> {
        Self::from_rows(std::slice::from_ref(item))
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        write_record(path, &mut w, &self.columns)?;
        for row in &self.rows {
            write_record(path, &mut w, row)?;
        }
        flush(path, w)
    }

    /// Parses a CSV written by [`Table::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv_reader(path)?;
        let columns = headers(path, &mut reader)?;
        let rows = reader
            .records()
            .map(|r| {
                r.map(|rec| rec.iter().map(str::to_string).collect())
                    .map_err(|e| csv_error(path, e))
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidInput(format!("unknown report format {s:?}"))),
        }
    }
}

/// Writes a single report object, or a list of rows, in either format.
/// CSV keeps only scalar fields (one row per element for lists).
pub fn write_report<T: Serialize>(report: &T, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => write_json(report, path),
        ReportFormat::Csv => {
            let value =
                serde_json::to_value(report).map_err(|e| Error::Serialize(e.to_string()))?;
            let table = match value {
                Value::Array(items) => Table::from_rows(&items)?,
                other => Table::from_record(&other)?,
            };
            table.write_csv(path)
        }
    }
}
