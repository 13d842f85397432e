use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn yieldnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yieldnet"))
        .args(args)
        .env_remove("YIELDNET_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = yieldnet(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}\n{}", stderr(&o));
    stdout(&o)
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 12 counties over 1990–1999.
fn small_data(tmp: &TempDir) -> PathBuf {
    let dir = tmp.path().join("data");
    ok(&["gen-synthetic", "--counties", "12", "--states", "3", "--years", "1990:1999", "--seed", "5", "--out", s(&dir)]);
    dir
}

#[test]
fn gen_synthetic_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let line = ok(&["gen-synthetic", "--counties", "50", "--years", "1980:2000", "--seed", "42", "--out", s(d)]);
        assert_eq!(line.lines().count(), 1);
        assert!(line.contains("1050 records"), "{line}");
    }
    let (x, y) = (read_dir_bytes(&a), read_dir_bytes(&b));
    assert_eq!(x.keys().collect::<Vec<_>>().len(), 6);
    assert_eq!(x, y);
}

#[test]
fn average_holdout_reports_zero_correlation() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    let out = tmp.path().join("out");
    let line = ok(&["experiment", "holdout", "--data", s(&data), "--year", "1999", "--model", "average", "--out", s(&out)]);
    assert!(line.starts_with("holdout average: validation RMSE"), "{line}");
    let m = metrics(&out);
    assert_eq!(m["metrics"][0]["validation_correlation"], 0.0);
    assert_eq!(m["experiment"], "holdout");
    assert_eq!(m["seed"], 0);
    let predictions = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(predictions.starts_with(&format!("# config_hash={} seed=0\n", m["config_hash"].as_str().unwrap())));
    assert_eq!(predictions.lines().nth(1), Some("county_id,year,truth,prediction,abs_error"));
}

#[test]
fn train_then_evaluate_reproduces_the_fixture_rmse() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("fixture");
    ok(&["gen-synthetic", "--counties", "60", "--states", "4", "--years", "1980:2000", "--seed", "42", "--out", s(&data)]);
    let model = tmp.path().join("model.bin");
    let (trained, scored) = (tmp.path().join("train"), tmp.path().join("eval"));
    ok(&["train", "--data", s(&data), "--year", "2000", "--model-file", s(&model), "--out", s(&trained)]);
    let line = ok(&["evaluate", "--data", s(&data), "--year", "2000", "--model-file", s(&model), "--out", s(&scored)]);
    assert!(line.starts_with("evaluate cnn-rnn: validation RMSE"), "{line}");
    let a = metrics(&trained)["metrics"][0]["validation_rmse"].as_f64().unwrap();
    let b = metrics(&scored)["metrics"][0]["validation_rmse"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    let body = |dir: &Path| {
        std::fs::read_to_string(dir.join("predictions.csv")).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(body(&trained), body(&scored));
}

#[test]
fn unknown_flags_print_usage_and_exit_1() {
    let o = yieldnet(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(yieldnet(&["launch"]).status.code(), Some(1));
    assert_eq!(yieldnet(&["experiment", "holdout", "--model", "svm"]).status.code(), Some(1));
    assert_eq!(yieldnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_required_values_exit_1() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    let o = yieldnet(&["experiment", "holdout", "--data", s(&data), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--year"), "{}", stderr(&o));
}

#[test]
fn malformed_csv_exits_2_with_a_location() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    let path = data.join("yield.csv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text = text.replacen("\n1,", "\n1,one,", 1);
    std::fs::write(&path, text).unwrap();
    let o = yieldnet(&["summarize", "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("yield.csv") && err.contains("line"), "{err}");
}

#[test]
fn missing_paths_exit_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(yieldnet(&["summarize", "--data", s(&tmp.path().join("none"))]).status.code(), Some(2));
    let data = small_data(&tmp);
    let o = yieldnet(&["evaluate", "--data", s(&data), "--year", "1999", "--model-file", s(&tmp.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, format!("# holdout settings\ndata = {}\nyear = 1999\nmodel = lasso\nseed = 7\n", s(&data))).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["experiment", "holdout", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["experiment", "holdout", "--config", s(&cfg), "--seed", "3", "--model", "average", "--out", s(&b)]);
    let (ma, mb) = (metrics(&a), metrics(&b));
    assert_eq!(ma["seed"], 7);
    assert_eq!(ma["parameters"]["model"], "lasso");
    assert_eq!(mb["seed"], 3);
    assert_eq!(mb["parameters"]["model"], "average");

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let o = yieldnet(&["summarize", "--config", s(&cfg), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key"), "{}", stderr(&o));
}

#[test]
fn thread_settings_are_validated() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    assert_eq!(yieldnet(&["summarize", "--data", s(&data), "--threads", "0"]).status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_yieldnet"))
        .args(["summarize", "--data", s(&data)])
        .env("YIELDNET_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_yieldnet"))
        .args(["summarize", "--data", s(&data)])
        .env("YIELDNET_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn summarize_lists_each_year() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    let table = ok(&["summarize", "--data", s(&data), "--years", "1998:1999"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "crop,year,mean,sd,count");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("corn,1999,") && lines[2].ends_with(",12"));
    let file = tmp.path().join("summary.csv");
    let line = ok(&["summarize", "--data", s(&data), "--out", s(&file)]);
    assert_eq!(line.lines().count(), 1);
    assert_eq!(std::fs::read_to_string(&file).unwrap().lines().count(), 11);
}

#[test]
fn commands_leave_the_data_directory_untouched() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    let before = read_dir_bytes(&data);
    ok(&["experiment", "cv", "--data", s(&data), "--year", "1999", "--model", "lasso", "--folds", "3", "--out", s(&tmp.path().join("cv"))]);
    ok(&["summarize", "--data", s(&data)]);
    assert_eq!(read_dir_bytes(&data), before);
}

#[test]
fn small_cnn_pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(&tmp);
    let fit = ["--k", "2", "--iters", "60", "--log-every", "20"];
    let model = tmp.path().join("m.bin");
    let mut args = vec!["train", "--data", s(&data), "--year", "1999", "--model-file", s(&model)];
    args.extend(fit);
    ok(&args);

    let attr = tmp.path().join("attr");
    let line = ok(&["attribute", "--data", s(&data), "--year", "1999", "--model-file", s(&model), "--out", s(&attr)]);
    assert!(line.starts_with("attribute: top weather features"), "{line}");
    let csv = std::fs::read_to_string(attr.join("attribution.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 422);

    let sweep = tmp.path().join("sweep");
    let line = ok(&[
        "experiment", "weather-sweep", "--data", s(&data), "--year", "1999", "--model-file", s(&model),
        "--weeks", "22:39", "--step", "3", "--k", "2", "--out", s(&sweep),
    ]);
    assert!(line.contains("over 7 steps"), "{line}");
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("weeks_updated,rmse,mean_pred"));
    assert_eq!(csv.lines().count(), 2 + 7);

    let lasso = tmp.path().join("lasso.bin");
    ok(&["train", "--data", s(&data), "--year", "1999", "--k", "2", "--model", "lasso", "--model-file", s(&lasso)]);
    let o = yieldnet(&["attribute", "--data", s(&data), "--year", "1999", "--model-file", s(&lasso), "--out", s(&attr)]);
    assert_eq!(o.status.code(), Some(1));

    let ablation = tmp.path().join("ablation");
    let mut args = vec!["experiment", "ablation", "--data", s(&data), "--year", "1999", "--sources", "M,AVG", "--out", s(&ablation)];
    args.extend(fit);
    ok(&args);
    assert!(ablation.join("predictions_average.csv").exists());
    let labels: Vec<String> = metrics(&ablation)["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["label"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(labels, ["cnn-rnn-M", "average"]);
}
