use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn precipnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_precipnet"))
        .args(args)
        .env_remove("PRECIPNET_OUT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let out = precipnet(args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["gen-synthetic", "--days", "40", "--seed", "3", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

const TINY: [&str; 8] = ["--conv-channels", "2,2", "--fc-hidden", "4", "--max-epochs", "3", "--batch-size", "8"];

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    precipnet(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generation_is_deterministic_and_loadable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = gen(a.path(), &["--levels", "v2", "--precision", "f32"]);
    let db = gen(b.path(), &["--levels", "v2", "--precision", "f32"]);
    for f in ["manifest.json", "stack.bin", "targets.bin", "generation.json"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    let manifest = json(&da.join("manifest.json"));
    assert_eq!(manifest["dims"]["D"], 40);
    assert_eq!(manifest["precision"], "f32");
    assert_eq!(manifest["levels_hpa"].as_array().unwrap().len(), 6);
    let generation = json(&da.join("generation.json"));
    assert_eq!(generation["spec"]["seed"], 3);
    assert_eq!(generation["ar_coefficient"], 0.8);
    let ds = precipnet::dataio::load_dataset(&da).unwrap();
    assert_eq!(ds.dims().days, 40);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&precipnet(&[])), 1);
    assert_eq!(code(&precipnet(&["gen-synthetic", "--bogus"])), 1);
    let bad_grid = precipnet(&["gen-synthetic", "--grid", "8by8", "--out", s(dir.path())]);
    assert_eq!(code(&bad_grid), 1);
    assert_eq!(code(&precipnet(&["gen-synthetic", "--grid", "2x2", "--out", s(dir.path())])), 1);
    // no --out and no PRECIPNET_OUT
    let out = precipnet(&["gen-synthetic", "--days", "5"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("PRECIPNET_OUT"));
    assert_eq!(code(&precipnet(&["--help"])), 0);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_precipnet"))
        .args(["gen-synthetic", "--days", "5"])
        .env("PRECIPNET_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("dataset/manifest.json").is_file());
}

#[test]
fn train_writes_roster_and_selected_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let run = dir.path().join("run");
    let out = train(
        &data,
        &run,
        &["--variant", "3d-vert", "--timesteps", "ts6", "--levels", "v1", "--restarts", "3", "--seed", "1"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = json(&run.join("manifest.json"));
    let runs = manifest["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for (i, r) in runs.iter().enumerate() {
        assert_eq!(r["seed"], 1 + i as u64);
        let dir = run.join(format!("runs/run_{i:03}"));
        assert!(dir.join("run.json").is_file());
        assert!(dir.join("checkpoint/checkpoint.json").is_file());
        let curve = fs::read_to_string(dir.join("curve.csv")).unwrap();
        let mut lines = curve.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,val_loss"));
        assert_eq!(lines.count() as u64, r["epochs_run"].as_u64().unwrap());
    }
    assert_eq!(manifest["channels"], 24);
    let selected = manifest["selected"]["index"].as_u64().unwrap() as usize;
    let best = runs[selected]["best_val_loss"].as_f64().unwrap();
    assert!(runs.iter().all(|r| r["best_val_loss"].as_f64().unwrap() >= best));
    let ck = precipnet::Checkpoint::load(&run.join("checkpoint")).unwrap();
    assert_eq!(ck.meta.seed, 1 + selected as u64);
    assert_eq!(ck.meta.best_val_loss, best);
}

#[test]
fn two_d_checkpoint_records_channel_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let run = dir.path().join("run");
    let out = train(&data, &run, &["--variant", "2d", "--timesteps", "ts6", "--restarts", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ck = precipnet::Checkpoint::load(&run.join("checkpoint")).unwrap();
    assert_eq!(ck.meta.channels, 120);
    assert_eq!(ck.meta.input_shape, vec![120, 8, 8]);
}

#[test]
fn training_preconditions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let run = dir.path().join("run");

    let out = train(&data, &run, &["--variant", "2d", "--batch-size", "1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("batch"));

    let out = train(&data, &run, &["--variant", "2d", "--train-range", "1980-01-01:1980-01-20"]);
    assert_eq!(code(&out), 1);

    // depth 2 cannot take a depth-3 pool window without clamping
    let out = train(&data, &run, &["--variant", "3d-time", "--timesteps", "ts2", "--depth-pooling", "strict"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("pool"));
    assert!(!run.exists());

    let out = train(&data, &run, &["--variant", "3d-time", "--timesteps", "ts2", "--restarts", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["shapes"]["pool_depth_clamped"], true);
    assert_eq!(manifest["shapes"]["pool_window"], serde_json::json!([2, 3, 3]));
}

#[test]
fn short_records_fail_with_a_clear_message() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = dir.path().join("tiny");
    ok(&["gen-synthetic", "--days", "2", "--out", s(&tiny)]);
    let out = train(&tiny, &dir.path().join("a"), &["--variant", "2d", "--timesteps", "ts6"]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("empty period"), "{}", stderr(&out));

    // single-day periods leave no room for the previous and next day
    let short = dir.path().join("short");
    ok(&["gen-synthetic", "--days", "3", "--out", s(&short)]);
    let out = train(
        &short,
        &dir.path().join("b"),
        &[
            "--variant", "2d", "--timesteps", "ts6",
            "--train-range", "1980-01-01:1980-01-01",
            "--val-range", "1980-01-02:1980-01-02",
            "--test-range", "1980-01-03:1980-01-03",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train period"), "{}", stderr(&out));
}

#[test]
fn evaluate_compare_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &["--noise-std", "0.2"]);
    let run = dir.path().join("run");
    let out = train(&data, &run, &["--variant", "2d", "--timesteps", "ts2", "--restarts", "2", "--label", "T1-2D"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    ok(&["evaluate", "--run", s(&run), "--data", s(&data), "--out", s(&e1)]);
    ok(&["evaluate", "--run", s(&run.join("checkpoint")), "--data", s(&data), "--out", s(&e2)]);
    let r1 = fs::read(e1.join("report.json")).unwrap();
    assert_eq!(r1, fs::read(e2.join("report.json")).unwrap());
    let report = json(&e1.join("report.json"));
    assert_eq!(report["label"], "T1-2D");
    assert_eq!(report["report"]["test"]["n_samples"], 8);

    let md = ok(&["compare", s(&e1), s(&e2.join("report.json")), "--format", "markdown"]);
    assert_eq!(md.lines().count(), 4);
    assert!(md.lines().nth(2).unwrap().starts_with("| T1-2D |"));
    let table = dir.path().join("table.csv");
    ok(&["compare", s(&e1), "--out", s(&table)]);
    let mut reader = csv::Reader::from_path(&table).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 10);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let nse: f64 = rows[0][2].parse().unwrap();
    let exact = report["report"]["train"]["nse"].as_f64().unwrap();
    assert!((nse - exact).abs() <= 0.005 * exact.abs().max(1e-3));

    let csv_text = ok(&["export-predictions", "--run", s(&run), "--data", s(&data), "--period", "test"]);
    let lines: Vec<&str> = csv_text.lines().collect();
    assert_eq!(lines[0], "date,obs_mm,pred_mm");
    assert_eq!(lines.len(), 9);
    assert!(lines[1].starts_with("1980-02-02,"));
    let all = dir.path().join("all.csv");
    ok(&["export-predictions", "--run", s(&run), "--data", s(&data), "--clamp", "--out", s(&all)]);
    let text = fs::read_to_string(&all).unwrap();
    assert_eq!(text.lines().count(), 41);
    for line in text.lines().skip(1) {
        let pred: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(pred >= 0.0);
    }
}

#[test]
fn inconsistent_artifacts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let run = dir.path().join("run");
    assert!(train(&data, &run, &["--variant", "2d", "--timesteps", "ts2", "--restarts", "1"]).status.success());

    let other = dir.path().join("other");
    ok(&["gen-synthetic", "--days", "40", "--vars", "3", "--out", s(&other)]);
    let out = precipnet(&["evaluate", "--run", s(&run), "--data", s(&other), "--out", s(&dir.path().join("e"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = precipnet(&["compare", s(&dir.path().join("missing"))]);
    assert_eq!(code(&out), 2);
    let out = precipnet(&["evaluate", "--run", s(&dir.path().join("nowhere")), "--data", s(&data), "--out", s(&dir.path().join("e"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_reports_and_fails_on_tolerance() {
    let out = ok(&["gradcheck", "--instances", "2"]);
    assert_eq!(out.lines().count(), 12);
    assert!(out.lines().skip(1).all(|l| l.ends_with("ok")));
    let strict = precipnet(&["gradcheck", "--instances", "1", "--tolerance", "1e-30"]);
    assert_eq!(code(&strict), 3);
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL"));
}
