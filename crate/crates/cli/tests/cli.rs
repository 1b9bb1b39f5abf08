use std::path::Path;
use std::process::{Command, Output};

fn hei(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hei"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hei(args);
    assert!(
        out.status.success(),
        "hei {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "data.num_nodes=240",
    "--epochs",
    "8",
    "--warmup-epochs",
    "3",
    "--set",
    "train.m_inner=2",
];

#[test]
fn synth_patterns_split_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let msg = ok(&["synth", "--out", s(&data), "--num-nodes", "150", "--seed", "4"]);
    assert!(msg.contains("150 nodes"), "{msg}");
    for f in ["edges.tsv", "features.csv", "labels.txt", "split.json", "shift_report.json"] {
        assert!(data.join(f).exists(), "missing {f}");
    }

    let pat = dir.path().join("z.csv");
    ok(&["patterns", "--data", s(&data), "--metric", "agg_sim", "--out", s(&pat)]);
    let text = std::fs::read_to_string(&pat).unwrap();
    // Metric comment, column header, then one row per node.
    assert!(text.starts_with("# metric=agg_sim"), "{text}");
    assert_eq!(text.lines().count(), 152);

    let setting = dir.path().join("setting.json");
    ok(&["split", "--data", s(&data), "--setting", "simulation_low_to_high", "--out", s(&setting)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&setting).unwrap()).unwrap();
    let train = v["train_idx"].as_array().unwrap().len();
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("split.json")).unwrap()).unwrap();
    let full_train = split["train"].as_array().unwrap().len();
    assert!(train <= full_train.div_ceil(2) && train + 1 >= full_train / 2);
}

#[test]
fn train_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--trainer", "hei", "--out", s(dir.path())];
    args.extend_from_slice(SMALL);
    let stdout = ok(&args);
    let acc: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(acc["full_test"].as_f64().unwrap() > 0.0);
    for f in [
        "history.jsonl",
        "accuracy.json",
        "model.bin",
        "model.json",
        "split.json",
        "config.toml",
        "environments.json",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let history = std::fs::read_to_string(dir.path().join("history.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    assert!(lines[7]["penalty"].is_number());
}

#[test]
fn config_file_beats_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nepochs = 5\n").unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--trainer", "erm", "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(SMALL);
    ok(&args);
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("epochs = 5"), "{written}");
    assert_eq!(std::fs::read_to_string(out.join("history.jsonl")).unwrap().lines().count(), 5);
}

#[test]
fn experiment_is_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, trainer) in [(&a, "erm"), (&b, "erm"), (&c, "vrex")] {
        let mut args = vec!["experiment", "--trainer", trainer, "--trials", "2", "--out", s(out)];
        args.extend_from_slice(SMALL);
        ok(&args);
    }
    let ra = std::fs::read_to_string(a.join("result.json")).unwrap();
    let rb = std::fs::read_to_string(b.join("result.json")).unwrap();
    // Only the output directory differs between the two runs.
    assert_eq!(ra.replace(s(&a), "X"), rb.replace(s(&b), "X"));

    let rep = dir.path().join("rep");
    std::fs::create_dir(&rep).unwrap();
    let md = ok(&[
        "report",
        s(&a.join("result.json")),
        s(&c.join("result.json")),
        "--out",
        s(&rep),
    ]);
    assert!(md.contains("erm") && md.contains("vrex"), "{md}");
    assert!(rep.join("report.md").exists());
}

#[test]
fn sweep_prints_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep", "--trainer", "hei", "--trials", "1", "--param", "K", "--values", "2,3", "--out",
        s(dir.path()),
    ];
    args.extend_from_slice(SMALL);
    let csv = ok(&args);
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(dir.path().join("sweep.csv").exists());
}

#[test]
fn errors_are_json_on_stderr() {
    let out = hei(&["train", "--trainer", "nope"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "config");
    assert!(err["error"].as_str().unwrap().contains("nope"));

    let out = hei(&["sweep", "--param", "K", "--values", "13"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "config");
}

#[test]
fn k_alias_in_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nK = 4\n").unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--trainer", "hei", "--set", "train.K=3", "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(SMALL);
    ok(&args);
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("k = 4"), "{written}");
    let env: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("environments.json")).unwrap()).unwrap();
    assert_eq!(env["weights"]["cols"], 4, "{env}");
}
