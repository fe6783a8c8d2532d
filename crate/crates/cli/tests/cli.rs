use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evifuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evifuse")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = evifuse(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Two views, three classes, 36 samples with well separated class means.
fn write_dataset(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let mut a = String::new();
    let mut b = String::new();
    let mut labels = String::new();
    for i in 0..36 {
        let y = i % 3;
        let jitter = |k: usize| ((i * 7 + k * 3) % 5) as f64 * 0.1;
        a.push_str(&format!("{},{},{}\n", y as f64 * 2.0 + jitter(0), -(y as f64) + jitter(1), jitter(2)));
        b.push_str(&format!("{},{}\n", (2 - y) as f64 * 1.5 + jitter(3), y as f64 + jitter(4)));
        labels.push_str(&format!("{y}\n"));
    }
    fs::write(dir.join("view_0.csv"), a).unwrap();
    fs::write(dir.join("view_1.csv"), b).unwrap();
    fs::write(dir.join("labels.csv"), labels).unwrap();
}

fn write_config(path: &Path, epochs: usize) {
    let cfg = format!(r#"{{"schema": 1, "epochs": {epochs}, "batch_size": 16, "k": 3, "n_samplings": 3, "hidden": [8], "optimizer": {{"learning_rate": 0.01, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8, "weight_decay": 1e-5}}}}"#);
    fs::write(path, cfg).unwrap();
}

#[test]
fn train_eval_stability_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let p = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let d = data.to_str().unwrap();
    write_config(&tmp.path().join("cfg.json"), 20);

    ok(&["mask", "--data", d, "--eta", "0.25", "--out", &p("mask.csv"), "--seed", "3"]);
    let mask = fs::read_to_string(p("mask.csv")).unwrap();
    assert_eq!(mask.lines().count(), 36);
    assert_eq!(mask.matches('0').count(), 18);

    ok(&[
        "train", "--data", d, "--mask", &p("mask.csv"), "--config", &p("cfg.json"), "--out", &p("model.json"),
        "--metrics", &p("history.json"),
    ]);
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 20);

    ok(&["eval", "--model", &p("model.json"), "--data", d, "--mask", &p("mask.csv"), "--ns", "5", "--out", &p("m.json")]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("m.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_samples"], 36);
    assert!(metrics["accuracy"].as_f64().unwrap() > 0.8, "{metrics}");

    let stdout = ok(&["stability", "--model", &p("model.json"), "--data", d, "--mask", &p("mask.csv"), "--repeats", "3"]);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["per_sample_flags"].as_array().unwrap().len(), 36);

    ok(&["export-imputed", "--model", &p("model.json"), "--data", d, "--mask", &p("mask.csv"), "--ns", "4", "--out", &p("export")]);
    let files = fs::read_dir(p("export")).unwrap().count();
    assert_eq!(files, 4);
    let first = fs::read_to_string(tmp.path().join("export/sampling_000.csv")).unwrap();
    assert!(first.lines().all(|l| l.split(',').count() == 6));

    ok(&["impute", "--data", d, "--mask", &p("mask.csv"), "--k", "2", "--ns", "2", "--out", &p("imputed")]);
    assert_eq!(fs::read_dir(p("imputed")).unwrap().count(), 2);
}

#[test]
fn sweep_is_resumable_and_reportable() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let out = tmp.path().join("sweep");
    let cfg = tmp.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"schema": 1, "train": {"epochs": 3, "batch_size": 16, "k": 3, "n_samplings": 2, "hidden": [4]}}"#,
    )
    .unwrap();
    let args = [
        "sweep", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--etas", "0,0.5", "--seeds", "0,1,2",
        "--out", out.to_str().unwrap(),
    ];
    ok(&args);
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next().unwrap(), "eta,seed,mode,accuracy,mean_uncertainty,wall_time");
    assert_eq!(lines.count(), 6);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["entries"].as_array().unwrap().len(), 2);

    let rerun = evifuse(&args);
    assert!(rerun.status.success());
    assert!(String::from_utf8_lossy(&rerun.stderr).contains("0 cells run"));
    let again = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(again, results);

    let tidy = tmp.path().join("tidy.csv");
    let text = ok(&["report", "--results", out.join("results.csv").to_str().unwrap(), "--tidy", tidy.to_str().unwrap()]);
    assert_eq!(text.lines().count(), 3);
    assert_eq!(fs::read_to_string(&tidy).unwrap().lines().count(), 5);
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let d = data.to_str().unwrap();
    let model = tmp.path().join("model.json");
    let m = model.to_str().unwrap();

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"schema": 1, "epochs": 0}"#).unwrap();
    assert_eq!(evifuse(&["train", "--data", d, "--config", bad.to_str().unwrap(), "--out", m]).status.code(), Some(2));
    fs::write(&bad, r#"{"schema": 2}"#).unwrap();
    assert_eq!(evifuse(&["train", "--data", d, "--config", bad.to_str().unwrap(), "--out", m]).status.code(), Some(2));
    assert_eq!(evifuse(&["mask", "--data", d, "--eta", "1.5", "--out", m]).status.code(), Some(2));
    assert_eq!(evifuse(&["eval", "--model", m, "--data", d]).status.code(), Some(2));

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "eta,seed,mode,accuracy,mean_uncertainty,wall_time\n").unwrap();
    assert_eq!(evifuse(&["report", "--results", empty.to_str().unwrap()]).status.code(), Some(2));

    let wild = tmp.path().join("wild.json");
    fs::write(&wild, r#"{"schema": 1, "epochs": 5, "batch_size": 8, "hidden": [8], "optimizer": {"learning_rate": 1e300, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8, "weight_decay": 0.0}}"#).unwrap();
    let out = evifuse(&["train", "--data", d, "--config", wild.to_str().unwrap(), "--out", m]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
