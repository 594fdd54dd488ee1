use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use whar::train::checkpoint::Checkpoint;

const TINY: &str = r#"
[mfe]
channels = 4

[csi]
d_k = 8

[train]
max_epochs = 3
patience = 2
batch = 8

[data]
sensors = 2
variables = 2
length = 32
classes = 3
samples_per_class = 4
train_domains = 2
"#;

fn whar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whar")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.join("data");
    let o = whar(&["generate", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (cfg.to_str().unwrap().to_owned(), data.to_str().unwrap().to_owned())
}

#[test]
fn generate_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(tmp.path());
    for split in ["train", "val", "test"] {
        assert!(Path::new(&data).join(format!("{split}.whar")).exists());
    }
    assert!(Path::new(&data).join("config.toml").exists());

    let run = tmp.path().join("run");
    let o = whar(&["train", "--config", &cfg, "--data", &data, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["best.ckpt", "last.ckpt", "train_log.csv", "metrics.csv", "config.toml"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    // the resolved config parses back and carries the data's dimensions
    let resolved = whar::config::RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(resolved.model.sensors, 2);
    assert_eq!(resolved.model.length, 32);

    let best = run.join("best.ckpt");
    let out = tmp.path().join("eval.csv");
    let o = whar(&[
        "eval",
        "--checkpoint",
        best.to_str().unwrap(),
        "--data",
        &data,
        "--split",
        "val",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let ck = Checkpoint::load(&best).unwrap();
    assert!((row[1] - ck.state.best_metric).abs() < 1e-6, "{} vs {}", row[1], ck.state.best_metric);
}

#[test]
fn ablate_emits_four_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(tmp.path());
    let out = tmp.path().join("abl");
    let o = whar(&[
        "ablate",
        "--config",
        &cfg,
        "--data",
        &data,
        "--out",
        out.to_str().unwrap(),
        "--repeats",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["baseline", "+mom", "+cfb", "full"]);
    assert!(out.join("ablation_summary.csv").exists());
}

#[test]
fn bench_pairs_fusions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[model]\nsensors = 2\nvariables = 2\nlength = 16\nclasses = 3\n[mfe]\nchannels = 4\n[csi]\nd_k = 4\n").unwrap();
    let out = tmp.path().join("bench").join("bench.csv");
    let o = whar(&["bench", "--config", cfg.to_str().unwrap(), "--channels", "4,8", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let fusions: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(fusions, ["cfb", "attention", "cfb", "attention"]);
    assert!(out.parent().unwrap().join("config.toml").exists());
}

#[test]
fn gradcheck_report_is_stable() {
    let a = whar(&["gradcheck", "--shapes", "1", "--seed", "4"]);
    let b = whar(&["gradcheck", "--shapes", "1", "--seed", "4"]);
    assert_eq!(code(&a), 0, "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("network,f32"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&whar(&["frobnicate"])), 1);
    assert_eq!(code(&whar(&["train"])), 1);
    assert_eq!(code(&whar(&["--help"])), 0);
}

#[test]
fn unknown_config_key_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlr = 1e-4\nlearning_rate = 3\n").unwrap();
    let o = whar(&["generate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn missing_data_is_runtime_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let o = whar(&[
        "train",
        "--data",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}
