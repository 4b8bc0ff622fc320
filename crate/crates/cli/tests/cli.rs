use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn reckit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reckit")).current_dir(dir).args(args).output().expect("spawn reckit")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 30 users x 20 items, every user rates items `u % 3 ..` in steps of 2.
fn workspace(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut ratings = String::new();
    for u in 1..=30u64 {
        for i in ((u % 3)..20).step_by(2) {
            let r = 1 + (u * 7 + i * 3) % 5;
            ratings.push_str(&format!("{u}\t{}\t{r}\t{}\n", i + 1, 880_000_000 + u * 1000 + i));
        }
    }
    std::fs::write(dir.path().join("ratings.tsv"), ratings).unwrap();
    let mut tx = String::from("customer_id,timestamp,amount\n");
    for c in 0..12 {
        for t in 0..=(c % 4) {
            tx.push_str(&format!("cust{c},{},{}.5\n", 1_600_000_000 + c * 86_400 + t * 3600, 10 + c * t));
        }
    }
    std::fs::write(dir.path().join("tx.csv"), tx).unwrap();
    std::fs::write(dir.path().join("config.json"), config).unwrap();
    dir
}

const MF: &str = r#"{"seed": 5, "data": {"ratings": "ratings.tsv"},
    "model": {"algorithm": "mf", "train": {"factors": 3, "epochs": 10}},
    "evaluation": {"k": 5}}"#;

fn out(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join("out").join(name)
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = workspace(MF);
    let o = reckit(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn help_exits_0() {
    let dir = workspace(MF);
    let o = reckit(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("evaluate"));
}

#[test]
fn bad_k_is_a_usage_error() {
    let dir = workspace(MF);
    let o = reckit(dir.path(), &["--config", "config.json", "recommend", "--user", "1", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_model_names_the_field() {
    let dir = workspace(r#"{"seed": 1, "data": {"ratings": "ratings.tsv"}}"#);
    let o = reckit(dir.path(), &["--config", "config.json", "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`model`"), "{}", stderr(&o));
}

#[test]
fn missing_seed_names_the_field() {
    let dir = workspace(r#"{"data": {"ratings": "ratings.tsv"}, "model": {"algorithm": "global_mean"}}"#);
    let o = reckit(dir.path(), &["--config", "config.json", "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`seed`"), "{}", stderr(&o));
    let o = reckit(dir.path(), &["--config", "config.json", "--seed", "3", "--out", "out", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn invalid_values_name_their_path() {
    let dir = workspace(r#"{"seed": 1, "split": {"test_fraction": 1.5}, "model": {"algorithm": "global_mean"}}"#);
    let o = reckit(dir.path(), &["--config", "config.json", "split", "--ratings", "ratings.tsv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("split.test_fraction"), "{}", stderr(&o));

    let dir = workspace(r#"{"seed": 1, "model": {"algorithm": "mf", "train": {"factorz": 3}}}"#);
    let o = reckit(dir.path(), &["--config", "config.json", "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model"), "{}", stderr(&o));
}

#[test]
fn missing_ratings_file_is_reported() {
    let dir = workspace(MF);
    let o = reckit(dir.path(), &["--config", "config.json", "stats", "--ratings", "nope.tsv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.tsv"), "{}", stderr(&o));
}

#[test]
fn stats_and_ingest() {
    let dir = workspace(MF);
    let o = reckit(dir.path(), &["--config", "config.json", "stats"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("users=30\n"), "{}", stdout(&o));
    let o = reckit(dir.path(), &["--config", "config.json", "--out", "out", "ingest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["ratings.tsv", "stats.json", "stats.txt"] {
        assert!(out(&dir, f).is_file(), "{f} missing");
    }
}

#[test]
fn split_partitions_every_line() {
    let dir = workspace(MF);
    let o = reckit(dir.path(), &["--config", "config.json", "--out", "out", "split"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let count = |p: PathBuf| std::fs::read_to_string(p).unwrap().lines().filter(|l| !l.is_empty()).count();
    let total = count(dir.path().join("ratings.tsv"));
    assert_eq!(count(out(&dir, "train.tsv")) + count(out(&dir, "test.tsv")), total);
}

#[test]
fn train_evaluate_recommend_with_saved_model() {
    let dir = workspace(MF);
    let o = reckit(dir.path(), &["--config", "config.json", "--out", "out", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = out(&dir, "model.json");
    let text = std::fs::read_to_string(&model).unwrap();
    assert!(text.starts_with(r#"{"format":"reckit-model","version":1"#));

    let m = model.to_str().unwrap();
    let o = reckit(dir.path(), &["--config", "config.json", "--out", "out", "evaluate", "--model", m]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("rmse="));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out(&dir, "report.json")).unwrap()).unwrap();
    assert!(report["rmse"].as_f64().unwrap() > 0.0);

    let o = reckit(dir.path(), &["--config", "config.json", "recommend", "--model", m, "--user", "4", "--k", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines[0], "rank\titem\tscore");
    assert_eq!(lines.len(), 4);
    let scores: Vec<f64> = lines[1..].iter().map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let o = reckit(dir.path(), &["--config", "config.json", "recommend", "--model", m, "--user", "999", "--k", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn model_from_another_dataset_is_rejected() {
    let dir = workspace(MF);
    assert!(reckit(dir.path(), &["--config", "config.json", "--out", "out", "train"]).status.success());
    let other = "1\t1\t3\t1\n2\t2\t4\t2\n";
    std::fs::write(dir.path().join("other.tsv"), other).unwrap();
    let m = out(&dir, "model.json");
    let o = reckit(
        dir.path(),
        &["--config", "config.json", "evaluate", "--ratings", "other.tsv", "--model", m.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tune_writes_results() {
    let dir = workspace(
        r#"{"seed": 2, "data": {"ratings": "ratings.tsv"},
        "tuning": {"metric": "rmse", "grid": {"learning_rate": [0.01, 0.05], "lambda": [0.1], "factors": [2],
                   "epochs": [5], "batch_size": [1]}}}"#,
    );
    let o = reckit(dir.path(), &["--config", "config.json", "--out", "out", "tune"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out(&dir, "tuning.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("trial,learning_rate,lambda,factors,epochs,batch_size,rmse,error"));
    assert!(stdout(&o).starts_with("best rmse="));
}

#[test]
fn segment_with_kmeans() {
    let dir = workspace(r#"{"seed": 4, "segmentation": {"kmeans": {"k": 3}}}"#);
    let o = reckit(dir.path(), &["--config", "config.json", "--out", "out", "segment", "--transactions", "tx.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out(&dir, "segments.csv")).unwrap();
    assert!(csv.starts_with("customer_id,recency,frequency,monetary,r,f,m,segment"));
    assert_eq!(csv.lines().count(), 13);
    assert!(out(&dir, "kmeans.json").is_file());
}

#[test]
fn segment_rejects_reference_before_transactions() {
    let dir = workspace(r#"{"seed": 4}"#);
    let o = reckit(dir.path(), &["segment", "--transactions", "tx.csv", "--reference", "1000"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_run_leaves_no_partial_outputs() {
    let dir = workspace(r#"{"seed": 1, "data": {"ratings": "ratings.tsv"}, "model": {"algorithm": "cbf"}}"#);
    let o = reckit(dir.path(), &["--config", "config.json", "--out", "out", "train"]);
    assert_eq!(o.status.code(), Some(1), "cbf without an item catalog must fail");
    let leftovers: Vec<_> = std::fs::read_dir(dir.path().join("out")).map(|d| d.collect()).unwrap_or_default();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}
