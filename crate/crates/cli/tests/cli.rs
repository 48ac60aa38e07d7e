use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capp_core::{RunConfig, Split};

fn capp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capp"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = capp(args);
    assert!(
        o.status.success(),
        "capp {args:?} failed:\n{}\n{}",
        stdout(&o),
        stderr(&o)
    );
    let out = stdout(&o);
    assert!(out.starts_with("status=ok "), "{out}");
    out
}

/// Value of `key=` on a summary line.
fn field(line: &str, key: &str) -> String {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_data(dir: &Path) -> PathBuf {
    ok(&["gen-data", "--out", s(dir)]);
    dir.join("dataset.jsonl")
}

#[test]
fn gen_data_writes_dataset_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(&["gen-data", "--out", s(dir.path())]);
    assert_eq!(field(&line, "records"), "2048");
    let text = fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2048);
    let vocab = fs::read_to_string(dir.path().join("vocab.json")).unwrap();
    let committed =
        fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/vocab.json"))
            .unwrap();
    assert_eq!(vocab, committed);
}

#[test]
fn missing_dataset_is_a_runtime_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = capp(&["split", "--dataset", s(&missing), "--fraction", "0.01"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.jsonl"), "{}", stderr(&o));
    assert!(stdout(&o).contains("status=error"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(capp(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(capp(&["split"]).status.code(), Some(1));
    assert_eq!(
        capp(&[
            "augment",
            "--traces",
            "t",
            "--oracle",
            "o",
            "--strategy",
            "oops"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn every_subcommand_has_help() {
    for cmd in [
        "gen-data",
        "split",
        "train",
        "gen-traces",
        "features",
        "oracle-train",
        "augment",
        "retrain",
        "eval",
        "experiment",
        "summarize",
    ] {
        let o = capp(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
}

#[test]
fn out_of_range_fraction_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_data(dir.path());
    let o = capp(&[
        "split",
        "--dataset",
        s(&ds),
        "--fraction",
        "0.95",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn staged_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = gen_data(d);
    let ds = s(&ds);
    let line = ok(&[
        "split",
        "--dataset",
        ds,
        "--fraction",
        "0.025",
        "--seed",
        "4",
        "--out",
        s(d),
    ]);
    assert_eq!(field(&line, "train"), "51");
    let labeled_n: usize = field(&line, "train").parse::<usize>().unwrap()
        + field(&line, "val").parse::<usize>().unwrap();
    let split = field(&line, "path");

    let line = ok(&[
        "train",
        "--dataset",
        ds,
        "--split",
        &split,
        "--epochs",
        "3",
        "--out",
        s(d),
        "--seed",
        "4",
    ]);
    let model = field(&line, "model");
    assert!(
        field(&line, "final_loss").parse::<f64>().unwrap()
            < field(&line, "initial_loss").parse::<f64>().unwrap()
    );

    let line = ok(&[
        "gen-traces",
        "--dataset",
        ds,
        "--split",
        &split,
        "--model",
        &model,
        "--partition",
        "labeled",
        "--name",
        "labeled.jsonl",
        "--out",
        s(d),
    ]);
    assert_eq!(field(&line, "n"), labeled_n.to_string());
    let labeled = field(&line, "traces");
    let line = ok(&[
        "gen-traces",
        "--dataset",
        ds,
        "--split",
        &split,
        "--model",
        &model,
        "--out",
        s(d),
    ]);
    let test_traces = field(&line, "traces");

    let line = ok(&[
        "features",
        "--traces",
        &labeled,
        "--dataset",
        ds,
        "--out",
        s(d),
    ]);
    assert_eq!(field(&line, "rows"), labeled_n.to_string());
    let features = field(&line, "features");
    let text = fs::read_to_string(&features).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=fv1"));
    assert_eq!(lines.next().unwrap().split(',').count(), 2 + 132);

    let line = ok(&["oracle-train", "--features", &features, "--out", s(d)]);
    let oracle = field(&line, "oracle");

    for strategy in ["detector", "random"] {
        let line = ok(&[
            "augment",
            "--traces",
            &test_traces,
            "--oracle",
            &oracle,
            "--proportion",
            "0.5",
            "--strategy",
            strategy,
            "--out",
            s(d),
        ]);
        let aug = field(&line, "augment");
        let line = ok(&[
            "retrain",
            "--dataset",
            ds,
            "--split",
            &split,
            "--model",
            &model,
            "--augment",
            &aug,
            "--epochs",
            "1",
            "--out",
            s(d),
        ]);
        let retrained = field(&line, "model");
        let line = ok(&[
            "eval",
            "--dataset",
            ds,
            "--split",
            &split,
            "--model",
            &retrained,
            "--out",
            s(d),
        ]);
        let acc: f64 = field(&line, "accuracy").parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn retrain_refuses_augmentation_from_labeled_parts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = gen_data(d);
    let ds = s(&ds);
    let split = field(
        &ok(&[
            "split",
            "--dataset",
            ds,
            "--fraction",
            "0.01",
            "--out",
            s(d),
        ]),
        "path",
    );
    let model = field(
        &ok(&[
            "train",
            "--dataset",
            ds,
            "--split",
            &split,
            "--epochs",
            "1",
            "--out",
            s(d),
        ]),
        "model",
    );
    let first_train = Split::load(Path::new(&split)).unwrap().train_parts[0].index();
    let aug = d.join("bad.tsv");
    fs::write(&aug, format!("{}\tsand_casting,deburring\n", first_train)).unwrap();
    let o = capp(&[
        "retrain",
        "--dataset",
        ds,
        "--split",
        &split,
        "--model",
        &model,
        "--augment",
        s(&aug),
        "--epochs",
        "1",
        "--out",
        s(d),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("non-test part"), "{}", stderr(&o));
}

fn tiny_config(dir: &Path, dataset: &Path) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.experiment.fractions = vec![0.01];
    cfg.experiment.proportions = vec![0.5, 1.0];
    cfg.experiment.seeds = vec![3];
    cfg.train.epochs = 2;
    cfg.retrain.epochs = 1;
    cfg.paths.dataset = dataset.to_path_buf();
    cfg.paths.out_dir = dir.join("runs");
    let text = cfg.to_toml();
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn tiny_experiment_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = gen_data(d);
    let cfg = tiny_config(d, &ds);
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = d.join(run);
        let line = ok(&["experiment", "--config", s(&cfg), "--out", s(&out)]);
        // One baseline row plus two arms for each of two proportions.
        assert_eq!(field(&line, "rows"), "5");
        assert_eq!(field(&line, "expected_rows"), "5");
        assert_eq!(field(&line, "failed_cells"), "0");
        let results = fs::read(out.join("results.csv")).unwrap();
        assert_eq!(String::from_utf8_lossy(&results).lines().count(), 6);
        assert!(out.join("summary.csv").exists());
        assert!(out.join("config.toml").exists());
        bytes.push(results);
    }
    assert_eq!(bytes[0], bytes[1]);

    let line = ok(&[
        "summarize",
        "--results",
        s(&d.join("a/results.csv")),
        "--out",
        s(&d.join("resum")),
    ]);
    assert_eq!(field(&line, "results"), "5");
    assert_eq!(
        fs::read(d.join("a/summary.csv")).unwrap(),
        fs::read(d.join("resum/summary.csv")).unwrap()
    );
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let good = fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml"),
    )
    .unwrap();
    fs::write(&cfg, format!("{good}\nbogus = 1\n")).unwrap();
    let o = capp(&["experiment", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}
