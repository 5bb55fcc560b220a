use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use btgp_cli::model::ModelFile;
use tempfile::TempDir;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut full = vec!["btgp"];
    full.extend_from_slice(args);
    let code = btgp_cli::run(full, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

/// Ten rows on a 2-d grid with distinct cells at precision 4.
fn tiny(dir: &Path) -> PathBuf {
    let mut body = String::from("a,b,y\n");
    for i in 0..10 {
        let (a, b) = (i as f64 / 9.0, ((i * 7) % 10) as f64 / 9.0);
        body.push_str(&format!("{a},{b},{}\n", (3.0 * a).sin() + b));
    }
    write(dir, "tiny.csv", &body)
}

fn read_predictions(text: &str) -> Vec<(f64, f64, bool)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mu,sigma2,out_of_box"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

fn train(dir: &Path, data: &Path, extra: &[&str]) -> PathBuf {
    let model = dir.join("m.btgp");
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap()];
    args.extend_from_slice(extra);
    let (code, text) = run(&args);
    assert_eq!(code, 0, "{text}");
    model
}

#[test]
fn tiny_train_is_fast_and_finite() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = dir.path().join("m.btgp");
    let start = Instant::now();
    let (code, text) = run(&["--json", "train", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap()]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(code, 0, "{text}");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["train_nll"].as_f64().unwrap().is_finite());
    assert_eq!(v["n"], 10);
    assert!(model.exists());
}

#[test]
fn invalid_precision_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = dir.path().join("m.btgp");
    for p in ["0", "-1", "33"] {
        let (code, _) = run(&["train", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--precision", p]);
        assert_eq!(code, 1, "precision {p}");
    }
    assert!(!model.exists());
}

#[test]
fn binary_exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let bin = env!("CARGO_BIN_EXE_btgp");
    let status = Command::new(bin).args(["train", "--data"]).arg(&data).args(["--precision", "0", "--model", "x"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = Command::new(bin).args(["eval", "--model"]).arg(dir.path().join("missing.btgp")).arg("--data").arg(&data).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn empty_prediction_file_gives_header_only() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = train(dir.path(), &data, &[]);
    let empty = write(dir.path(), "empty.csv", "a,b\n");
    let (code, text) = run(&["predict", "--model", model.to_str().unwrap(), "--data", empty.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(text.trim(), "mu,sigma2,out_of_box");
}

#[test]
fn out_of_box_rows_are_flagged_and_use_prior() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = train(dir.path(), &data, &[]);
    let queries = write(dir.path(), "q.csv", "a,b\n0.5,0.5\n1.5,0.5\n0.5,-2\n");
    let (code, text) = run(&["predict", "--model", model.to_str().unwrap(), "--data", queries.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    let rows = read_predictions(&text);
    assert_eq!(rows.iter().map(|r| r.2).collect::<Vec<_>>(), [false, true, true]);
    // Outside the box the prediction falls back to the prior in original units.
    let file = ModelFile::load(&model).unwrap();
    let s = file.model.data().standardizer;
    assert!((rows[1].0 - s.mean).abs() < 1e-12);
    assert_eq!(rows[1].0, rows[2].0);
    assert_eq!(rows[1].1, rows[2].1);
    assert!(rows[1].1 >= rows[0].1);
}

#[test]
fn joint_rescale_keeps_everything_in_box() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = train(dir.path(), &data, &[]);
    let queries = write(dir.path(), "q.csv", "a,b\n0.5,0.5\n1.5,0.5\n");
    let (code, text) = run(&["predict", "--model", model.to_str().unwrap(), "--data", queries.to_str().unwrap(), "--out-of-box", "joint-rescale"]);
    assert_eq!(code, 0, "{text}");
    assert!(read_predictions(&text).iter().all(|r| !r.2 && r.1.is_finite()));
}

#[test]
fn feature_count_mismatch_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = train(dir.path(), &data, &[]);
    let queries = write(dir.path(), "q.csv", "u,v,w\n0.5,0.5,0.5\n");
    let (code, _) = run(&["predict", "--model", model.to_str().unwrap(), "--data", queries.to_str().unwrap()]);
    assert_eq!(code, 2);
    // Extra columns are fine when every feature is found by name.
    let named = write(dir.path(), "n.csv", "c,b,a\n9,0.5,0.5\n");
    let (code, text) = run(&["predict", "--model", model.to_str().unwrap(), "--data", named.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
}

#[test]
fn malformed_inputs_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.btgp");
    let m = model.to_str().unwrap();
    let bad = write(dir.path(), "bad.csv", "a,y\n0.1,1\nfoo,2\n");
    assert_eq!(run(&["train", "--data", bad.to_str().unwrap(), "--model", m]).0, 2);
    let one = write(dir.path(), "one.csv", "a,y\n0.1,1\n");
    assert_eq!(run(&["train", "--data", one.to_str().unwrap(), "--model", m]).0, 2);
    let data = tiny(dir.path());
    assert_eq!(run(&["train", "--data", data.to_str().unwrap(), "--target", "nope", "--model", m]).0, 2);
}

#[test]
fn near_zero_noise_interpolates_training_targets() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = train(dir.path(), &data, &["--lambda", "1e-8", "--precision", "8"]);
    let (code, text) = run(&["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    let y: Vec<f64> = std::fs::read_to_string(&data)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    for ((mu, _, _), t) in read_predictions(&text).iter().zip(&y) {
        assert!((mu - t).abs() <= 1e-4 * (1.0 + t.abs()), "{mu} vs {t}");
    }
}

#[test]
fn eval_metrics_match_written_predictions() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = train(dir.path(), &data, &[]);
    let (code, text) = run(&["--json", "eval", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();

    let (_, csv) = run(&["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    let preds = read_predictions(&csv);
    let y: Vec<f64> = std::fs::read_to_string(&data).unwrap().lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let file = ModelFile::load(&model).unwrap();
    let s = file.model.data().standardizer;
    let n = y.len() as f64;
    let (mut nll, mut sq) = (0.0, 0.0);
    for ((mu, var, _), t) in preds.iter().zip(&y) {
        let (z, v) = ((t - mu) / s.std, var / (s.std * s.std));
        nll += 0.5 * (2.0 * std::f64::consts::PI * v).ln() + 0.5 * z * z / v;
        sq += (t - mu).powi(2);
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    assert!(close(report["nll"].as_f64().unwrap(), nll / n));
    assert!(close(report["rmse"].as_f64().unwrap(), (sq / n).sqrt()));
    assert_eq!(report["n"], 10);
}

#[test]
fn eda_flags_clustered_columns() {
    let dir = TempDir::new().unwrap();
    let mut body = String::from("a,b\n");
    for i in 0..200 {
        let a = if i % 2 == 0 { 1e-6 * i as f64 } else { 1000.0 + i as f64 };
        body.push_str(&format!("{a},{}\n", i as f64 / 200.0));
    }
    let data = write(dir.path(), "c.csv", &body);
    let (code, text) = run(&["--json", "eda", "--data", data.to_str().unwrap(), "--target", "b", "--precision", "2", "--ecdf"]);
    assert_eq!(code, 0, "{text}");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["advisory"].is_string(), "{text}");
}

#[test]
fn same_seed_gives_identical_model_files() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let args = ["--ensemble", "3", "--inits", "9", "--seed", "7", "--max-iters", "20"];
    let a = std::fs::read(train(dir.path(), &data, &args)).unwrap();
    let b = std::fs::read(train(dir.path(), &data, &args)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ensemble_size_and_init_budget_are_honoured() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = dir.path().join("m.btgp");
    let (code, text) = run(&[
        "--json", "train", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(),
        "--ensemble", "20", "--inits", "480", "--max-iters", "5",
    ]);
    assert_eq!(code, 0, "{text}");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["members"], 20);
}

#[test]
fn split_reports_held_out_scores() {
    let dir = TempDir::new().unwrap();
    let data = tiny(dir.path());
    let model = dir.path().join("m.btgp");
    let (code, text) = run(&["--json", "train", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--split", "80:20"]);
    assert_eq!(code, 0, "{text}");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["n"], 8);
    assert_eq!(v["test"]["n"], 2);
}
