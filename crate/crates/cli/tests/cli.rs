use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus")
}

fn anomalygen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anomalygen"))
        .args(args)
        .env_remove("ANOMALYGEN_API_KEY")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_dataset_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let o = anomalygen(&["--corpus", s(&fixture()), "--output", s(out.path()), "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("log events   46/46 (100.00%)"), "{t}");
    assert!(t.contains("rejected"), "{t}");
    assert!(out.path().join("dataset.jsonl").metadata().unwrap().len() > 0);
}

#[test]
fn subcommands_compose_to_run() {
    let full = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    let o = anomalygen(&["--corpus", s(&fixture()), "-o", s(full.path()), "run"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["parse", "graph", "prune", "extract", "enhance", "merge", "label", "report"] {
        let o = anomalygen(&[cmd, "--corpus", s(&fixture()), "-o", s(staged.path())]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", text(&o));
    }
    for name in ["pruned.json", "subgraphs.json", "enhanced.json", "merged.json", "dataset.jsonl"] {
        let a = std::fs::read(full.path().join(name)).unwrap();
        let b = std::fs::read(staged.path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn missing_upstream_artifact_is_a_stage_failure() {
    let out = tempfile::tempdir().unwrap();
    let o = anomalygen(&["merge", "--corpus", s(&fixture()), "-o", s(out.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("missing upstream artifact"), "{}", text(&o));
    assert!(text(&o).contains("corpus.json"));
}

#[test]
fn bad_configuration_fails_before_any_stage() {
    let out = tempfile::tempdir().unwrap();
    let o = anomalygen(&["run", "--corpus", "/nonexistent/corpus", "-o", s(out.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("does not exist"));
    assert!(!out.path().join("corpus.json").exists());

    let o = anomalygen(&["run", "--corpus", s(&fixture()), "-o", s(out.path()), "--review-rate", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(anomalygen(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(anomalygen(&["run", "--entry-threshold", "many"]).status.code(), Some(1));
    let help = anomalygen(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(text(&help).contains("agreement"));
}

fn config_hash(dir: &Path) -> String {
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    report["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("anomalygen.toml");
    std::fs::write(
        &cfg,
        format!("corpus = [{:?}]\noutput = \"from-file\"\ndepth_threshold = 2\nseed = 9\n", s(&fixture())),
    )
    .unwrap();

    // file alone: relative output resolves next to the file
    let o = anomalygen(&["-c", s(&cfg), "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let from_file = config_hash(&tmp.path().join("from-file"));

    // file + flag: the flag wins
    let flagged = tmp.path().join("flagged");
    let o = anomalygen(&["-c", s(&cfg), "run", "--depth-threshold", "3", "-o", s(&flagged)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));

    // flags alone with the same effective settings
    let plain = tmp.path().join("plain");
    let o = anomalygen(&["run", "--corpus", s(&fixture()), "--seed", "9", "-o", s(&plain)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));

    assert_eq!(config_hash(&flagged), config_hash(&plain));
    assert_ne!(config_hash(&flagged), from_file);
}

#[test]
fn report_as_json() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(anomalygen(&["run", "--corpus", s(&fixture()), "-o", s(out.path())]).status.code(), Some(0));
    let o = anomalygen(&["report", "--json", "--corpus", s(&fixture()), "-o", s(out.path())]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["coverage"]["coverage"], 1.0);
}

#[test]
fn agreement_command() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("ann.csv");
    std::fs::write(&csv, "item,annotator,label\na,x,normal\na,y,anomalous\nb,x,normal\nb,y,normal\nc,x,anomalous\nc,y,anomalous\n").unwrap();
    let o = anomalygen(&["agreement", s(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("alpha=") && t.contains("items=3"), "{t}");
    assert!(t.contains("below 0.8"));
    assert_eq!(anomalygen(&["agreement", "/nonexistent.csv"]).status.code(), Some(1));
}
