//! File formats, pipeline determinism and the command-line front end.

use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;

use crowdfair::io::{load_dataset, read_labels, write_dataset, write_labels};
use crowdfair::model::{AnnotationMatrix, TaskTable};
use crowdfair::pipeline::{cmd_pipeline, PipelineConfig};
use crowdfair::simulate::{generate, SimConfig};
use crowdfair::truth::majority_vote;
use crowdfair::Error;

const SIM_CONFIG: &str = r#"
n_tasks = 120
n_workers = 8
labels_per_task = 3
group_proportions = [0.5, 0.5]
base_rate = [0.6, 0.4]
feature_dim = 2
seed = 4

[[worker_spec]]
count = 8
sensitivity = [0.8, 0.8]
specificity = [0.85, 0.7]
"#;

fn pipeline_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::from_toml_str(&format!(
        "seed = 4\nrepeats = 3\nepsilon_grid = [0.1, 1.0]\neta_grid = [0.0, 1.0]\n[simulation]\n{}",
        SIM_CONFIG.replace("[[worker_spec]]", "[[simulation.worker_spec]]")
    ))
    .unwrap();
    cfg.threshold_grid = vec![0.0, 0.5, 1.0];
    cfg
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn datasets_survive_a_round_trip(seed in any::<u64>(), dim in prop::option::of(1usize..4), hide_truth in any::<bool>()) {
        let data = generate(&SimConfig { n_tasks: 40, feature_dim: dim, seed, ..SimConfig::default() }).unwrap();
        let tasks = if hide_truth {
            let truth = data.tasks.truth().iter().enumerate().map(|(i, t)| if i % 3 == 0 { None } else { *t }).collect();
            TaskTable::from_group_ids(
                data.tasks.groups().to_vec(),
                data.tasks.group_names().to_vec(),
                truth,
                data.tasks.features().map(<[_]>::to_vec),
            )
            .unwrap()
        } else {
            data.tasks.clone()
        };
        let dir = tempfile::tempdir().unwrap();
        let (a, t) = write_dataset(&data.matrix, &tasks, dir.path()).unwrap();
        let back = load_dataset(&a, &t).unwrap();
        prop_assert_eq!(&back.matrix, &data.matrix);
        prop_assert_eq!(&back.tasks, &tasks);

        let mv = majority_vote(&back.matrix);
        let labels = dir.path().join("labels.csv");
        write_labels(&back.matrix, &mv, &labels).unwrap();
        prop_assert_eq!(read_labels(&labels, &back.matrix).unwrap(), mv.labels);
    }
}

#[test]
fn dense_ids_follow_external_order() {
    let m = AnnotationMatrix::from_rows(&[(30, 9, 1), (10, 2, 0), (20, 9, 0), (10, 9, 1)]).unwrap();
    assert_eq!(m.task_ids(), &[10, 20, 30]);
    assert_eq!(m.worker_ids(), &[2, 9]);
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = write(
        dir.path(),
        "tasks.csv",
        "task_id,group,truth\n1,a,1\n2,b,0\n",
    );
    let cases = [
        ("task_id,worker_id,label\n1,1,1\n2,1,2\n", 3),
        ("task_id,worker_id,label\n1,1,1\n2,x,0\n", 3),
        ("task_id,worker_id,label\n1,1,1\n1,1,0\n2,1,1\n", 3),
        ("task_id,worker_id,label\n1,1,1\n9,1,1\n2,1,1\n", 3),
    ];
    for (text, want) in cases {
        let ann = write(dir.path(), "annotations.csv", text);
        match load_dataset(&ann, &tasks) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
            other => panic!("{text:?}: expected a parse error, got {other:?}"),
        }
    }
    let ann = write(
        dir.path(),
        "annotations.csv",
        "task_id,worker_id,label\n1,1,1\n",
    );
    let err = load_dataset(&ann, &tasks).unwrap_err();
    assert!(
        matches!(err, Error::Parse { line: 3, ref path, .. } if path == &tasks),
        "{err}"
    );
}

#[test]
fn pipeline_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = cmd_pipeline(&pipeline_config(), a.path()).unwrap();
    let mb = cmd_pipeline(&pipeline_config(), b.path()).unwrap();
    assert_eq!(ma, mb);
    assert!(ma.skipped.is_empty(), "{:?}", ma.skipped);
    for f in &ma.files {
        assert_eq!(
            fs::read(a.path().join(&f.path)).unwrap(),
            fs::read(b.path().join(&f.path)).unwrap(),
            "{}",
            f.path
        );
    }
    assert_eq!(
        fs::read(a.path().join("manifest.json")).unwrap(),
        fs::read(b.path().join("manifest.json")).unwrap()
    );
}

#[test]
fn pipeline_skips_stages_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(
        dir.path(),
        "annotations.csv",
        "task_id,worker_id,label\n1,1,1\n1,2,0\n2,1,1\n2,2,1\n3,2,0\n",
    );
    let tasks = write(
        dir.path(),
        "tasks.csv",
        "task_id,group,truth\n1,a,\n2,b,\n3,a,\n",
    );
    let cfg = PipelineConfig::from_toml_str(&format!(
        "algorithms = [\"mv\", \"ds\"]\n[dataset]\nannotations = {:?}\ntasks = {:?}\n",
        ann.display().to_string(),
        tasks.display().to_string()
    ))
    .unwrap();
    let manifest = cmd_pipeline(&cfg, &dir.path().join("out")).unwrap();
    assert!(!manifest.skipped.is_empty());
    assert!(dir.path().join("out/aggregate/mv/labels.csv").exists());
    assert!(!dir.path().join("out/fair_compare/frontier.csv").exists());
}

fn crowdfair(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_crowdfair"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_runs_each_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).display().to_string();
    write(dir.path(), "sim.toml", SIM_CONFIG);

    let out = crowdfair(&["simulate", "--config", &d("sim.toml"), "--out", &d("data")]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (ann, tasks) = (d("data/annotations.csv"), d("data/tasks.csv"));
    let data = ["--annotations", ann.as_str(), "--tasks", tasks.as_str()];

    let out = crowdfair(
        &[
            &["audit"],
            &data[..],
            &["--threshold-grid", "0,0.5,1", "--out", &d("audit")],
        ]
        .concat(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("audit/workers.csv").exists());

    let out = crowdfair(
        &[
            &["aggregate"],
            &data[..],
            &["--algorithm", "ds", "--out", &d("ds")],
        ]
        .concat(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["schema_version"], 1);
    assert!(metrics["accuracy"].as_f64().unwrap() > 0.5);

    let labels = d("ds/labels.csv");
    let out = crowdfair(
        &[
            &["downstream"],
            &data[..],
            &["--labels", &labels, "--repeats", "2", "--out", &d("down")],
        ]
        .concat(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("down/delta.json").exists());

    let out = crowdfair(
        &[
            &["fair-compare"],
            &data[..],
            &[
                "--epsilon-grid",
                "0.1,1",
                "--eta-grid",
                "0,1",
                "--out",
                &d("cmp"),
            ],
        ]
        .concat(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("cmp/frontier.csv").exists());

    // one thread or many, identical bytes
    let pipe = write(
        dir.path(),
        "pipe.toml",
        &format!(
            "repeats = 2\nepsilon_grid = [0.1]\neta_grid = [0.0]\n[simulation]\n{}",
            SIM_CONFIG.replace("[[worker_spec]]", "[[simulation.worker_spec]]")
        ),
    );
    let pipe = pipe.display().to_string();
    assert!(
        crowdfair(&["pipeline", "--config", &pipe, "--out", &d("p1")])
            .status
            .success()
    );
    assert!(crowdfair(&[
        "--threads",
        "1",
        "pipeline",
        "--config",
        &pipe,
        "--out",
        &d("p2")
    ])
    .status
    .success());
    assert_eq!(
        fs::read(d("p1/manifest.json")).unwrap(),
        fs::read(d("p2/manifest.json")).unwrap()
    );
}

#[test]
fn cli_exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "n_tasks = \"many\"\n");
    let out = crowdfair(&[
        "simulate",
        "--config",
        &bad.display().to_string(),
        "--out",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error (config)"));

    let ann = write(
        dir.path(),
        "annotations.csv",
        "task_id,worker_id,label\n1,1,7\n",
    );
    let tasks = write(dir.path(), "tasks.csv", "task_id,group,truth\n1,a,1\n");
    let (ann, tasks) = (ann.display().to_string(), tasks.display().to_string());
    let out = crowdfair(&[
        "aggregate",
        "--annotations",
        &ann,
        "--tasks",
        &tasks,
        "--out",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(3));

    let out = crowdfair(&[
        "aggregate",
        "--annotations",
        "/nonexistent/a.csv",
        "--tasks",
        &tasks,
        "--out",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(5));
}
