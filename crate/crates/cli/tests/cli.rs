use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causaltab::fixtures::write_scm4;
use causaltab_cli::RunManifest;

fn causaltab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causaltab")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small copy of the SCM fixture in a temporary directory.
fn small_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let fx = dir.join("fx");
    write_scm4(&fx, 300, 5).unwrap();
    (fx.join("data.csv"), fx.join("schema.json"), fx.join("rules.json"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    let out = causaltab(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    let out = causaltab(&["sample", "--ckpt", "nowhere.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--n"), "{}", stderr(&out));

    assert_eq!(causaltab(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_rows_is_rejected_before_reading_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("synth.csv");
    let out = causaltab(&["sample", "--ckpt", "missing.json", "--n", "0", "--out", s(&out_csv)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`--n`"), "{}", stderr(&out));
    assert!(!out_csv.exists());
    let manifest = RunManifest::load(&dir.path().join("synth.manifest.json")).unwrap();
    assert!(manifest.error.is_some());
}

#[test]
fn missing_input_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (_, schema, _) = small_fixture(dir.path());
    let out = causaltab(&[
        "discover",
        "--data",
        "does-not-exist.csv",
        "--schema",
        s(&schema),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("--data") && msg.contains("does-not-exist.csv"), "{msg}");
}

#[test]
fn cyclic_graph_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema, _) = small_fixture(dir.path());
    let graph = dir.path().join("g.json");
    fs::write(
        &graph,
        r#"[{"from":0,"to":1,"weight":1.0},{"from":1,"to":0,"weight":1.0}]"#,
    )
    .unwrap();
    let out = causaltab(&[
        "train",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--causal-graph",
        s(&graph),
        "--epochs",
        "1",
        "--out",
        s(&dir.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cycle"), "{}", stderr(&out));
}

#[test]
fn discover_writes_structure_files() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema, _) = small_fixture(dir.path());
    let out_dir = dir.path().join("disc");
    let out = causaltab(&[
        "discover",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--mode",
        "linear",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let adjacency = fs::read_to_string(out_dir.join("adjacency.csv")).unwrap();
    assert_eq!(adjacency.lines().next(), Some("x1,relationship,sex,x2"));
    assert_eq!(adjacency.lines().count(), 5);
    let mask: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("mask.json")).unwrap()).unwrap();
    assert_eq!(mask["width"], 7);
    let manifest = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "discover");
    assert_eq!(manifest.content_hash, manifest.hash());
    assert_eq!(manifest.inputs.len(), 2);
}

#[test]
fn train_sample_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema, rules) = small_fixture(dir.path());
    let graph = dir.path().join("g.json");
    fs::write(&graph, r#"[{"from":0,"to":1,"weight":1.0},{"from":1,"to":2,"weight":1.0}]"#).unwrap();
    let run_dir = dir.path().join("run");
    let out = causaltab(&[
        "train",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--causal-graph",
        s(&graph),
        "--epochs",
        "2",
        "--batch-size",
        "64",
        "--steps",
        "5",
        "--out",
        s(&run_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for file in ["checkpoint.json", "train_log.csv", "train.csv", "val.csv", "test.csv", "graph.json", "mask.json"] {
        assert!(run_dir.join(file).exists(), "{file}");
    }
    assert!(!run_dir.join("adjacency.csv").exists());

    let synth = dir.path().join("synth.csv");
    let sample = |seed: &str| {
        causaltab(&[
            "sample",
            "--ckpt",
            s(&run_dir.join("checkpoint.json")),
            "--n",
            "120",
            "--seed",
            seed,
            "--out",
            s(&synth),
        ])
    };
    assert_eq!(sample("3").status.code(), Some(0));
    let first = fs::read(&synth).unwrap();
    assert_eq!(sample("3").status.code(), Some(0));
    assert_eq!(fs::read(&synth).unwrap(), first);
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 121);

    let report = dir.path().join("eval").join("report.json");
    let out = causaltab(&[
        "evaluate",
        "--real",
        s(&run_dir.join("train.csv")),
        "--synth",
        s(&synth),
        "--schema",
        s(&schema),
        "--rules",
        s(&rules),
        "--train",
        s(&run_dir.join("train.csv")),
        "--holdout",
        s(&run_dir.join("test.csv")),
        "--out",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let value: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(value["shape_pct"].as_f64().unwrap() >= 0.0);
    assert_eq!(value["violations"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("eval").join("histograms").join("hist_x1.csv").exists());
    assert!(dir.path().join("eval").join("report.manifest.json").exists());
}

#[test]
fn pipeline_manifest_hash_is_stable_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema, rules) = small_fixture(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = causaltab(&[
            "pipeline",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--rules",
            s(&rules),
            "--notears",
            "off",
            "--epochs",
            "2",
            "--steps",
            "5",
            "--seed",
            "4",
            "--out",
            s(&out_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        out_dir
    };
    let a = run("a");
    let first = RunManifest::load(&a.join("manifest.json")).unwrap();
    for file in ["synthetic.csv", "report.json", "checkpoint.json", "graph.json"] {
        assert!(a.join(file).exists(), "{file}");
    }
    let again = run("a");
    let second = RunManifest::load(&again.join("manifest.json")).unwrap();
    assert_eq!(first.content_hash, second.content_hash);
    assert_eq!(first.seed, Some(4));
    assert!(first.error.is_none());
}

#[test]
fn bad_config_value_names_its_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema, _) = small_fixture(dir.path());
    let out = causaltab(&[
        "pipeline",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--notears",
        "off",
        "--w-max=-1",
        "--out",
        s(&dir.path().join("p")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--w-max"), "{}", stderr(&out));
}
