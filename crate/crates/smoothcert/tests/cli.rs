use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smoothcert"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small budgets so a certify run over a few toy inputs takes seconds.
fn quick_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "dataset": { "kind": "toy2d", "toy": { "num_per_class": 60 } },
        "subset": 4,
        "confidence": { "alpha": 0.001, "n0": 100, "n": 2000 },
        "ddrs": { "iter_grid": [20, 40], "n_eval": 400 },
        "ancer": { "iterations": 10 },
        "rddrs": { "iterations": 20, "n_samples": 300 },
        "train": { "epochs": 10, "hidden": [16] }
    });
    let p = dir.join("quick.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn train(dir: &Path, cfg: &Path) -> PathBuf {
    let model = dir.join("model.bin");
    let out = run(&["train", "--config", s(cfg), "--dataset", "toy2d", "--sigma", "0.25", "--epochs", "10", "--seed", "1", "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

fn certify(cfg: &Path, model: &Path, outdir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["certify", "--config", s(cfg), "--model", s(model), "--outdir", s(outdir), "--seed", "3"];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn full_pipeline_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let model = train(dir.path(), &cfg);
    let head = std::fs::read(&model).unwrap();
    assert_eq!(&head[..8], b"SMCERT01");

    let (a, b) = (dir.path().join("w1"), dir.path().join("w2"));
    let o = certify(&cfg, &model, &a, &["--workers", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = certify(&cfg, &model, &b, &["--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["certificates.csv", "traces.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    // the sidecar also records the run config, which names the worker count and outdir
    let side = |d: &Path| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(d.join("certificates.json")).unwrap()).unwrap() };
    let (ja, jb) = (side(&a), side(&b));
    assert_eq!(ja["records"], jb["records"]);
    assert_eq!(ja["inputs"], jb["inputs"]);

    let text = std::fs::read_to_string(a.join("certificates.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "input_id,method_tag,predicted_class,pA_lower,radius_gap,proxy_radius,det_root,lambda_min,wall_time_s");
    assert_eq!(lines.count(), 4 * 4);

    for line in std::fs::read_to_string(a.join("traces.jsonl")).unwrap().lines().take(50) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["iter", "H", "R", "P", "Kmin", "lambda_min", "step_size"] {
            assert!(v.get(k).is_some(), "trace line lacks {k}: {line}");
        }
    }

    let curves = dir.path().join("curves.csv");
    let o = run(&["curve", "--certs", s(&a), "--grid-max", "6", "--grid-step", "0.05", "--out", s(&curves)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&curves).unwrap();
    assert_eq!(text.lines().next().unwrap(), "radius,certified_accuracy,method_tag,sigma_train");
    assert_eq!(text.lines().count(), 1 + 4 * 121);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["methods"].as_array().unwrap().len(), 4);

    let region = dir.path().join("region.csv");
    let o = run(&["region2d", "--cert", s(&a.join("certificates.json")), "--points", "256", "--out", s(&region)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&region).unwrap().lines().count(), 257);
}

#[test]
fn rs_only_run_writes_one_row_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let model = train(dir.path(), &cfg);
    let out = dir.path().join("rs");
    let o = certify(&cfg, &model, &out, &["--methods", "rs", "--subset", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("certificates.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("RS")));
    assert!(std::fs::read_to_string(out.join("traces.jsonl")).unwrap().is_empty());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"sigma": 0.25, "no_such_field": 1}"#).unwrap();
    assert_eq!(run(&["certify", "--config", s(&bad)]).status.code(), Some(2));

    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["train", "--config", s(&bad)]).status.code(), Some(2));

    assert_eq!(run(&["certify", "--dataset", "toy2d", "--methods", "rs,foo"]).status.code(), Some(2));
    assert_eq!(run(&["certify", "--dataset", "toy2d", "--sigma", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["certify", "--dataset", "toy2d", "--subset", "0"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.bin");
    let o = run(&["certify", "--dataset", "toy2d", "--model", s(&missing), "--outdir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));

    let cfg = dir.path().join("mnist.json");
    std::fs::write(&cfg, json!({"dataset": {"kind": "mnist", "dir": s(&dir.path().join("nowhere"))}}).to_string()).unwrap();
    assert_eq!(run(&["train", "--config", s(&cfg), "--epochs", "1", "--out", s(&missing)]).status.code(), Some(3));

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"NOTAMODEL").unwrap();
    assert_eq!(run(&["certify", "--dataset", "toy2d", "--model", s(&junk), "--outdir", s(dir.path())]).status.code(), Some(3));

    assert_eq!(run(&["curve", "--certs", s(&dir.path().join("none"))]).status.code(), Some(3));
}

#[test]
fn export_toy_writes_labelled_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy.csv");
    let o = run(&["export-toy", "--out", s(&out)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,label");
    assert_eq!(text.lines().count(), 1 + 3 * 200);
}
