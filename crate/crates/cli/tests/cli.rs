use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcpnn_cli::manifest::RunManifest;
use bcpnn_core::dataio::write_idx;
use bcpnn_core::{Dataset, ModelConfig};
use serde_json::Value;

fn bcpnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcpnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_width: 8,
        input_height: 8,
        hidden_hc: 4,
        hidden_mc: 16,
        n_classes: 3,
        nact_hi: 16,
        epochs_unsup: 2,
        packet_ih: 16,
        packet_ho: 16,
        fifo_depth: 4,
        noise_amp: 0.02,
        rewire_interval: 10,
        n_swaps: 2,
        ..ModelConfig::model1()
    }
}

/// Three stripe classes with a little per-sample variation.
fn dataset(n: usize, offset: usize) -> Dataset {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for k in offset..offset + n {
        let class = k % 3;
        let img = (0..64)
            .map(|i| {
                let (r, c) = (i / 8, i % 8);
                let on = match class {
                    0 => r % 4 < 2,
                    1 => c % 4 < 2,
                    _ => (r + c) % 4 < 2,
                };
                let jitter = ((i * 7 + k * 13) % 5) as f64 / 51.0;
                if on {
                    1.0 - jitter
                } else {
                    jitter
                }
            })
            .collect();
        images.push(img);
        labels.push(class);
    }
    Dataset::new(images, labels, 8, 8, 3).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mnist = root.join("data");
        fs::create_dir(&mnist).unwrap();
        write_idx(
            &dataset(60, 0),
            &mnist.join("train-images-idx3-ubyte"),
            &mnist.join("train-labels-idx1-ubyte"),
        )
        .unwrap();
        write_idx(
            &dataset(30, 1000),
            &mnist.join("t10k-images-idx3-ubyte"),
            &mnist.join("t10k-labels-idx1-ubyte"),
        )
        .unwrap();
        let config = root.join("tiny.cfg");
        fs::write(&config, tiny_config().to_text()).unwrap();
        Fixture {
            _dir: dir,
            config: config.display().to_string(),
            root,
        }
    }

    fn path(&self, p: &str) -> String {
        self.root.join(p).display().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> RunManifest {
        let (data, out) = (self.path("data"), self.path(out));
        let mut args = vec!["train", "--config", &self.config, "--mnist", &data, "--out", &out];
        args.extend_from_slice(extra);
        let stdout = ok(&bcpnn(&args));
        let line = stdout.lines().find(|l| l.starts_with("manifest ")).unwrap();
        RunManifest::load(Path::new(&line["manifest ".len()..])).unwrap()
    }
}

fn files_in(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    v.retain(|p| p.to_string_lossy().ends_with(suffix));
    v.sort();
    v
}

#[test]
fn engines_agree_and_runs_reproduce() {
    let fx = Fixture::new();
    let a = fx.train("oracle", &["--engine", "oracle"]);
    let b = fx.train("pipeline", &["--engine", "pipeline"]);
    for key in [
        "train_predictions_sha256",
        "test_predictions_sha256",
        "train_accuracy",
        "test_accuracy",
    ] {
        assert_eq!(a.metrics[key], b.metrics[key], "{key}");
    }
    let model_a = fs::read(fx.root.join("oracle").join(format!("{}.model", a.id))).unwrap();
    let model_b = fs::read(fx.root.join("pipeline").join(format!("{}.model", b.id))).unwrap();
    assert_eq!(model_a, model_b);
    assert!(a.metrics["train_accuracy"].as_f64().unwrap() > 0.9);

    let mut again = fx.train("again", &["--engine", "oracle"]);
    let mut first = a.clone();
    first.timings.clear();
    again.timings.clear();
    assert_eq!(first, again);
}

#[test]
fn missing_dataset_is_io_error_without_model_file() {
    let fx = Fixture::new();
    let out = fx.path("out");
    let missing = fx.path("nowhere");
    let res = bcpnn(&["train", "--config", &fx.config, "--mnist", &missing, "--out", &out]);
    assert_eq!(res.status.code(), Some(3));
    assert!(files_in(Path::new(&out), ".model").is_empty());
}

#[test]
fn config_errors_exit_2() {
    let fx = Fixture::new();
    let data = fx.path("data");
    assert_eq!(
        bcpnn(&["train", "--preset", "model9", "--mnist", &data]).status.code(),
        Some(2)
    );
    let bad = fx.path("bad.cfg");
    fs::write(&bad, "hidden_hc = 4\n").unwrap();
    assert_eq!(
        bcpnn(&["train", "--config", &bad, "--mnist", &data]).status.code(),
        Some(2)
    );
    let res = bcpnn(&[
        "train",
        "--config",
        &fx.config,
        "--set",
        "temperature=-1",
        "--mnist",
        &data,
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn eval_matches_training_accuracy_and_leaves_model_alone() {
    let fx = Fixture::new();
    let m = fx.train("t", &[]);
    let model = fx.root.join("t").join(format!("{}.model", m.id));
    let before = fs::read(&model).unwrap();
    let (model_s, data, out) = (model.display().to_string(), fx.path("data"), fx.path("e"));
    for engine in ["pipeline", "oracle"] {
        let stdout = ok(&bcpnn(&[
            "eval", "--model", &model_s, "--mnist", &data, "--split", "train", "--engine", engine, "--out", &out,
        ]));
        let path = stdout.lines().find(|l| l.starts_with("manifest ")).unwrap();
        let e = RunManifest::load(Path::new(&path["manifest ".len()..])).unwrap();
        assert_eq!(e.metrics["accuracy"], m.metrics["train_accuracy"]);
        let csv = fs::read_to_string(Path::new(&out).join(format!("{}.eval.csv", e.id))).unwrap();
        assert_eq!(csv.lines().count(), 61);
    }
    assert_eq!(fs::read(&model).unwrap(), before);

    let mut bad = before.clone();
    bad[4] ^= 0xff;
    let corrupted = fx.path("bad.model");
    fs::write(&corrupted, bad).unwrap();
    let res = bcpnn(&["eval", "--model", &corrupted, "--mnist", &data, "--out", &out]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("version"));
}

fn pgm_lit(path: &Path) -> usize {
    let bytes = fs::read(path).unwrap();
    let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
    assert!(bytes.starts_with(b"P5\n"));
    bytes[header_end..].iter().filter(|&&b| b > 0).count()
}

#[test]
fn export_rf_fresh_model_and_range_error() {
    let fx = Fixture::new();
    let out = fx.path("rf");
    let stdout = ok(&bcpnn(&[
        "export-rf",
        "--config",
        &fx.config,
        "--hc",
        "0",
        "--hc",
        "3",
        "--out",
        &out,
    ]));
    let files: Vec<&str> = stdout.lines().collect();
    assert_eq!(files.len(), 2);
    for f in files {
        assert_eq!(pgm_lit(Path::new(f)), 16);
    }
    let stdout = ok(&bcpnn(&["export-rf", "--preset", "model1", "--hc", "0", "--out", &out]));
    assert_eq!(pgm_lit(Path::new(stdout.trim())), 128);
    let res = bcpnn(&["export-rf", "--preset", "model1", "--hc", "99", "--out", &out]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn struct_training_snapshots() {
    let fx = Fixture::new();
    let m = fx.train("s", &["--mode", "struct", "--rf-every", "30", "--rf-hc", "1"]);
    let snaps = m.metrics["rf_snapshots"].as_array().unwrap();
    let steps: Vec<u64> = snaps.iter().map(|s| s["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, vec![0, 30, 60, 90, 120]);
    assert!(snaps.iter().all(|s| s["active"] == Value::from(vec![16])));
    assert!(m.metrics["rewire_events"].as_u64().unwrap() > 0);
    let pgms = files_in(&fx.root.join("s"), ".pgm");
    assert_eq!(pgms.len(), 5);
    assert!(pgms.iter().all(|p| pgm_lit(p) == 16));
    let mi: Vec<f64> = snaps.iter().map(|s| s["mean_active_mi"].as_f64().unwrap()).collect();
    assert!(mi.last() > mi.first());
}

#[test]
fn roofline_outputs() {
    let fx = Fixture::new();
    let out = fx.path("r");
    let stdout = ok(&bcpnn(&["roofline", "--out", &out]));
    assert!(stdout.contains("bandwidth 460.8 GB/s"), "{stdout}");
    assert!(stdout.contains("peak compute 268.032 GFLOP/s"));
    let csv_path = stdout.lines().find_map(|l| l.strip_prefix("roofline ")).unwrap();
    let csv = fs::read_to_string(csv_path).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("roof,")));

    let stdout = ok(&bcpnn(&[
        "roofline", "--preset", "model1", "--preset", "model2", "--preset", "model3", "--out", &out,
    ]));
    let csv = fs::read_to_string(stdout.lines().find_map(|l| l.strip_prefix("roofline ")).unwrap()).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("point,")).count(), 3);

    let res = ok(&bcpnn(&[
        "roofline",
        "--composition",
        "independent-pools",
        "--out",
        &out,
    ]));
    assert!(res.contains("558.4"));
    let res_file = fx.path("res.txt");
    fs::write(&res_file, "channels = 0\n").unwrap();
    assert_eq!(bcpnn(&["roofline", "--resources", &res_file]).status.code(), Some(2));
}

#[test]
fn bench_csv() {
    let fx = Fixture::new();
    let out = fx.path("b");
    let stdout = ok(&bcpnn(&["bench", "--images", "0", "--out", &out]));
    let csv = fs::read_to_string(stdout.trim().strip_prefix("bench ").unwrap()).unwrap();
    assert_eq!(csv, format!("{}\n", bcpnn_cli::bench::HEADER));

    let stdout = ok(&bcpnn(&[
        "bench",
        "--config",
        &fx.config,
        "--images",
        "6",
        "--fifo-depths",
        "1,4",
        "--out",
        &out,
    ]));
    let csv = fs::read_to_string(stdout.trim().strip_prefix("bench ").unwrap()).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("6")));
    assert_eq!(files_in(Path::new(&out), ".csv").len(), 1 + 1 + 6);

    // Measured points from bench stall profiles sit under the roof.
    let stats = files_in(Path::new(&out), "stalls-inference-d4.csv");
    let s = stats[0].display().to_string();
    ok(&bcpnn(&[
        "roofline", "--config", &fx.config, "--stats", &s, "--out", &out,
    ]));
}
