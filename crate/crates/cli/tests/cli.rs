use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ensemble-latent");

fn run(args: &[&str], root: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .env("ENSEMBLE_LATENT_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("one JSON line on stdout")
}

fn error_json(o: &Output) -> Value {
    assert!(!o.status.success());
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("machine-readable error line")
}

fn write_config(dir: &Path, output_dir: &str) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "dataset": {"kind": "splash", "n": 100},
        "model": {"latent_dim": 32},
        "aux": "contrastive",
        "epochs": 2,
        "batch_size": 32,
        "lr": 0.001,
        "seed": 11,
        "labeling": "ground_truth",
        "manual_fraction": 0.5,
        "output_dir": output_dir,
        "projection": {"n_neighbors": 8, "epochs": 40}
    });
    let path = dir.join(format!("{output_dir}.json"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn train_is_reproducible_and_artifacts_chain_through_subcommands() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let cfg_a = write_config(r, "a");
    let cfg_b = write_config(r, "b");
    let out_a = stdout_json(&run(&["train", "--config", cfg_a.to_str().unwrap()], r));
    stdout_json(&run(&["train", "--config", cfg_b.to_str().unwrap()], r));
    assert_eq!(out_a["epochs"], 2);
    for f in ["loss_curves.csv", "embedding.csv", "model.lfck", "loss_curves.svg", "projection.svg"] {
        let a = std::fs::read(r.join("a").join(f)).unwrap();
        let b = std::fs::read(r.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }

    let data = stdout_json(&run(&["generate-data", "--kind", "splash", "--n", "40", "--seed", "2", "--out", "data"], r));
    assert_eq!(data["n"], 40);
    let images = r.join("data/images-idx3-ubyte");
    let labels = r.join("data/labels-idx1-ubyte");
    let run_dir = r.join("a");
    let projected = stdout_json(&run(
        &[
            "project",
            "--run",
            run_dir.to_str().unwrap(),
            "--images",
            images.to_str().unwrap(),
            "--labels",
            labels.to_str().unwrap(),
            "--out",
            "proj/emb.csv",
        ],
        r,
    ));
    assert_eq!(projected["points"], 40);
    let emb = r.join("proj/emb.csv");
    let eval = stdout_json(&run(&["evaluate", "--embedding", emb.to_str().unwrap()], r));
    let s = eval["silhouette"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&s));
    assert_eq!(eval["n"], 40);

    let plotted = stdout_json(&run(&["plot", "--run", run_dir.to_str().unwrap(), "--out", "replot"], r));
    assert_eq!(plotted["written"].as_array().unwrap().len(), 4);
    assert_eq!(
        std::fs::read(r.join("replot/loss_curves.csv")).unwrap(),
        std::fs::read(run_dir.join("loss_curves.csv")).unwrap()
    );
}

#[test]
fn unknown_grid_key_fails_before_any_run() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let cfg = write_config(r, "grid");
    let grid = r.join("grid-values.json");
    std::fs::write(&grid, r#"{"latent": [32], "dropuot": [0.1]}"#).unwrap();
    let o = run(&["grid-search", "--config", cfg.to_str().unwrap(), "--grid", grid.to_str().unwrap()], r);
    let e = error_json(&o);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("dropuot"));
    assert!(!r.join("grid").exists());
}

#[test]
fn failures_emit_one_json_error_line() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let missing = r.join("nope.csv");
    let e = error_json(&run(&["evaluate", "--embedding", missing.to_str().unwrap()], r));
    assert_eq!(e["error"], "io");

    let bad = r.join("bad.json");
    std::fs::write(&bad, r#"{"model": {"latent_dim": 100}}"#).unwrap();
    let e = error_json(&run(&["train", "--config", bad.to_str().unwrap()], r));
    assert_eq!(e["error"], "config");

    let o = run(&["frobnicate"], r);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");
}
