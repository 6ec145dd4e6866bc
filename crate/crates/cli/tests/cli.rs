use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
n = 800
[split]
proto = 16
train_probe = 40
validation = 40
test = 60
[train]
steps = 20
warmup_steps = 10
eval_every = 10
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conflict-heads"))
        .current_dir(dir)
        .env_remove("CONFLICT_HEADS_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn tiny(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, format!("{TINY}[paths]\nout_dir = {:?}\n", dir.join("run").to_str().unwrap())).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--set", "train.lr_schedule=cosine", "gen"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    fs::write(dir.path().join("bad.toml"), "[model]\nseed = \"three\"\n").unwrap();
    let o = run(dir.path(), &["--config", "bad.toml", "gen"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_patch_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    assert!(run(dir.path(), &["--config", &cfg, "gen"]).status.success());
    let o = run(
        dir.path(),
        &["--config", &cfg, "patch", "--ckpt", "nowhere.json", "--proto", "run/dataset.unassigned.jsonl"],
    );
    assert_eq!(o.status.code(), Some(12), "{}", stderr(&o));
    assert!(stderr(&o).contains("patch"));
    assert!(stderr(&o).contains("nowhere.json"));
}

#[test]
fn test_sample_in_proto_exits_3_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    assert!(run(dir.path(), &["--config", &cfg, "gen", "--out", "gen.jsonl"]).status.success());
    assert!(run(dir.path(), &["--config", &cfg, "split", "--in", "gen.jsonl", "--out", "split.jsonl"])
        .status
        .success());
    let text = fs::read_to_string(dir.path().join("split.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    let id_in = |split: &str| rows.iter().find(|v| v["split"] == split).unwrap()["id"].as_u64().unwrap();
    let ids = format!("{},{}", id_in("train"), id_in("test"));
    let o =
        run(dir.path(), &["--config", &cfg, "split", "--in", "gen.jsonl", "--proto-ids", &ids, "--out", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!dir.path().join("bad.jsonl").exists());
}

#[test]
fn config_path_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_conflict-heads"))
        .current_dir(dir.path())
        .env("CONFLICT_HEADS_CONFIG", &cfg)
        .args(["gen", "--out", "g.jsonl"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("g.jsonl")).unwrap().lines().count(), 801);
}

#[test]
fn staged_chain_through_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let stage = |args: &[&str]| {
        let mut full = vec!["--config", cfg.as_str(), "--workers", "1"];
        full.extend_from_slice(args);
        let o = run(dir.path(), &full);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    stage(&["gen", "--out", "run/gen.jsonl"]);
    stage(&["split", "--in", "run/gen.jsonl"]);
    stage(&["train"]);
    stage(&["patch", "--scope", "last"]);
    stage(&["select"]);
    stage(&["ablate"]);
    stage(&["report"]);
    let run_dir = dir.path().join("run");
    for f in [
        "dataset.jsonl",
        "model.json",
        "train_curve.csv",
        "importance.csv",
        "groups.json",
        "report/report.csv",
        "report/report.txt",
    ] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let doc = fs::read_to_string(run_dir.join("report/report.txt")).unwrap();
    for label in ["base", "drive", "resist", "joint", "random:0"] {
        assert!(doc.lines().any(|l| l.starts_with(label)), "{label} missing");
    }
    let curve = fs::read_to_string(run_dir.join("train_curve.csv")).unwrap();
    assert!(curve.starts_with("# train-curve format_version=1"));
}
