use std::path::Path;

use ctxrec::cli::run_from;

const SMALL: [&str; 8] = [
    "data.num_users=60",
    "data.num_items=600",
    "data.num_categories=6",
    "data.mean_log_len=40",
    "model.dim=8",
    "model.max_seq_len=8",
    "train.epochs=1",
    "train.batch_size=16",
];

fn ctxrec(out: &Path, extra: &[&str], args: &[&str]) -> i32 {
    let mut argv = vec!["ctxrec".to_string(), "--out-dir".into(), out.display().to_string()];
    for s in SMALL.iter().chain(extra) {
        argv.push("--set".into());
        argv.push(s.to_string());
    }
    argv.extend(args.iter().map(|s| s.to_string()));
    run_from(argv)
}

#[test]
fn user_with_empty_log_gets_empty_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(ctxrec(out, &[], &["gen-data"]), 0);
    assert_eq!(ctxrec(out, &[], &["train"]), 0);
    assert_eq!(ctxrec(out, &[], &["build-index"]), 0);
    // Before any event, the log is empty as of the request day.
    assert_eq!(ctxrec(out, &[], &["retrieve", "--user", "1", "--now", "-1000"]), 0);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("retrieve-user-1.json")).unwrap()).unwrap();
    assert_eq!(r["selected"], serde_json::json!([]));
    assert_eq!(r["merged"], serde_json::json!([]));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    for name in ["dataset.jsonl", "model.ckpt", "index.bin", "metrics.jsonl", "retrieve-user-1.json"] {
        assert!(manifest["artifacts"][name].as_str().is_some_and(|h| h.len() == 64), "{name}");
    }
}

#[test]
fn bad_configuration_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_ne!(ctxrec(out, &["train.nonsense=1"], &["gen-data"]), 0);
    assert_ne!(ctxrec(out, &["train.epochs=\"three\""], &["gen-data"]), 0);
    assert_ne!(ctxrec(out, &["model.heads=3"], &["gen-data"]), 0);
    assert_ne!(ctxrec(out, &[], &["train"]), 0, "missing dataset");
    assert_ne!(ctxrec(out, &[], &["retrieve", "--user", "0"]), 0, "missing checkpoint");
}

#[test]
fn gzip_dataset_and_graph_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(ctxrec(out, &[], &["gen-data", "--gzip", "--seed", "3"]), 0);
    assert!(out.join("dataset.jsonl.gz").exists());
    let gz = ["paths.gzip=true"];
    assert_eq!(ctxrec(out, &gz, &["train"]), 0);
    assert_eq!(ctxrec(out, &gz, &["build-index", "--backend", "graph"]), 0);
    assert_eq!(ctxrec(out, &gz, &["retrieve", "--user", "2"]), 0);
    assert_eq!(ctxrec(out, &gz, &["evaluate", "--suite", "random-vs-top"]), 0);
    assert!(out.join("ablation.json").exists() && out.join("ablation.txt").exists());
}
