use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plan2vec"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(smoke_config())
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn data_rows(path: &Path) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).count() - 1
}

#[test]
fn missing_graph_names_the_file_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data"], dir.path());
    assert!(out.status.success());
    let out = run(&["train-plan2vec"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("graph.json"), "stderr: {err}");
    assert!(err.contains("build-graph"), "stderr: {err}");
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"layout": "c-maze", "not_a_key": 3}"#).unwrap();
    let out = bin().args(["gen-data", "--config"]).arg(&cfg).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn changed_upstream_config_is_reported_as_stale() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["gen-data"], dir.path()).status.success());
    let out = bin()
        .args(["train-local", "--config"])
        .arg(smoke_config())
        .args(["--n-rollouts", "50", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}

#[test]
fn pipeline_is_reproducible_and_plots_every_point() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(&["pipeline"], d.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["eval_report.json", "embedding.csv", "lookahead_curve.csv", "planning_cost.csv", "graph/edges.bin"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between identical runs");
    }

    let svg = std::fs::read_to_string(a.path().join("plots/embedding.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), data_rows(&a.path().join("embedding.csv")));

    // every stage leaves a record
    let log = std::fs::read_to_string(a.path().join("run.jsonl")).unwrap();
    let stages: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(stages, ["gen-data", "train-local", "build-graph", "train-plan2vec", "export-embedding", "evaluate", "plan-cost", "plot"]);

    // a single stage rerun picks up the saved config
    let out = bin().arg("plot").arg("--out-dir").arg(a.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn plot_single_csv_to_chosen_path() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    std::fs::write(&csv, "# schema_version=1\nmethod,k,successes,tasks,success_rate,standard_error\nplan2vec-value,1,9,10,0.9,0.09\nplan2vec-value,2,10,10,1,0\n").unwrap();
    let svg = dir.path().join("out.svg");
    let out = bin().arg("plot").arg(&csv).arg("-o").arg(&svg).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}
