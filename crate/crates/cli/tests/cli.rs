//! Drives the `floss` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
[data.synthetic]
periods = [12.0]
amplitudes = [1.0]
phases = [0.0]
noise_std = 0.1
length = 600
n_series = 2

[encoder]
repr_features = 8
hidden = 8
n_blocks = 2

[training]
window_length = 24
detect_window = 96
batch_size = 2
epochs = 2
steps_per_epoch = 3
horizon = 6

[task]
anomaly_context = 24
"#;

fn floss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floss"))
        .args(args)
        .env_remove("FLOSS_SEED")
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn assert_valid(schema_name: &str, v: &Value) {
    let validator = schema(schema_name);
    let errors: Vec<String> = validator.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}\n{v:#}");
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn detects_a_24_step_period() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("daily.csv");
    let out = floss(&["synth", "--periods", "24", "--length", "960", "--out", s(&csv)]);
    assert!(out.status.success());
    let out_dir = dir.path().join("det");
    let v = ok_json(&floss(&["detect-period", "--input", s(&csv), "--window", "168", "--samples", "50", "--out", s(&out_dir)]));
    assert_eq!(v["period"], 24.0);
    assert_eq!(v["mode"], 24);
    assert_eq!(v["histogram"]["24"], 50);
    assert_valid("detect.schema.json", &v);
    assert!(fs::read_to_string(out_dir.join("histogram.svg")).unwrap().contains("<svg"));
}

#[test]
fn constant_input_reports_no_period() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("t,x\n");
    for t in 0..200 {
        text.push_str(&format!("{t},3.5\n"));
    }
    let csv = write(dir.path(), "flat.csv", &text);
    let v = ok_json(&floss(&["detect-period", "--input", s(&csv), "--window", "64", "--samples", "10", "--out", s(&dir.path().join("o"))]));
    assert_eq!(v["period"], Value::Null);
    assert_eq!(v["mode"], Value::Null);
    assert_eq!(v["histogram"]["none"], 10);
    assert_valid("detect.schema.json", &v);
}

#[test]
fn user_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = floss(&["train", "--config", s(&dir.path().join("nope.toml")), "--out", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.toml"));

    let bad = write(dir.path(), "bad.toml", "[training]\nlearning_rat = 0.1\n");
    let out = floss(&["train", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    let short = write(dir.path(), "short.csv", "t,x\n0,1\n1,2\n2,3\n");
    let out = floss(&["detect-period", "--input", s(&short), "--window", "64", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_echo_is_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let first = floss(&["config", "--config", s(&cfg)]);
    assert!(first.status.success());
    let echoed = write(dir.path(), "echo.toml", std::str::from_utf8(&first.stdout).unwrap());
    let second = floss(&["config", "--config", s(&echoed)]);
    assert_eq!(first.stdout, second.stdout);
}

/// Metric fields of a report, i.e. everything except wall time.
fn without_wall_time(mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("wall_time_secs");
    }
    v
}

#[test]
fn train_and_evaluate_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stream_cfg = write(d, "stream.toml", &format!("{TINY}\n[data.spikes]\nratio = 0.02\n"));
    let class_cfg = write(
        d,
        "class.toml",
        &TINY.replace(
            "[data.synthetic]\nperiods = [12.0]\namplitudes = [1.0]\nphases = [0.0]\nnoise_std = 0.1\nlength = 600\nn_series = 2\n",
            "[data.classes]\ntrain_per_class = 6\ntest_per_class = 6\nlength = 48\n",
        ),
    );
    for (scheme, cfg) in [("joint", &stream_cfg), ("pretrain_finetune", &stream_cfg), ("self_supervised", &class_cfg)] {
        let ckpt = d.join(format!("{scheme}.json"));
        let report = ok_json(&floss(&["train", "--config", s(cfg), "--scheme", scheme, "--out-checkpoint", s(&ckpt), "--out", s(&d.join("t"))]));
        assert_valid("train.schema.json", &report);
        assert_eq!(report["scheme"], scheme);
        assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
        assert!(fs::read_to_string(d.join("t/loss.svg")).unwrap().contains("<svg"));

        let tasks: &[&str] = if scheme == "self_supervised" { &["classify"] } else { &["forecast", "anomaly"] };
        for task in tasks {
            let out = d.join(format!("e_{scheme}_{task}"));
            let v = ok_json(&floss(&["evaluate", "--checkpoint", s(&ckpt), "--task", task, "--config", s(cfg), "--out", s(&out)]));
            assert_valid("metrics.schema.json", &v);
            assert_eq!(v["task"], *task);
            let filled = match *task {
                "forecast" => ["mse", "mae"],
                "classify" => ["accuracy", "macro_f1"],
                _ => ["precision", "f1"],
            };
            for k in filled {
                assert!(v[k].is_number(), "{task}: {k} missing");
            }
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "c.toml", TINY);
    let run = |tag: &str| {
        let ckpt = d.join(format!("{tag}.json"));
        let t = ok_json(&floss(&["train", "--config", s(&cfg), "--seed", "7", "--out-checkpoint", s(&ckpt), "--out", s(&d.join(tag))]));
        let e = floss(&["evaluate", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--out", s(&d.join(tag))]);
        assert!(e.status.success());
        (without_wall_time(t), e.stdout, fs::read(&ckpt).unwrap())
    };
    let (t1, e1, c1) = run("a");
    let (t2, e2, c2) = run("b");
    assert_eq!(serde_json::to_string(&t1).unwrap(), serde_json::to_string(&t2).unwrap());
    assert_eq!(e1, e2);
    assert_eq!(c1, c2);
    let metrics: Value = serde_json::from_slice(&e1).unwrap();
    assert_eq!(metrics["seed"], 7);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "c.toml", TINY);
    let ckpt = d.join("m.json");
    let out = Command::new(env!("CARGO_BIN_EXE_floss"))
        .args(["train", "--config", s(&cfg), "--out-checkpoint", s(&ckpt), "--out", s(d)])
        .env("FLOSS_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    let saved: Value = serde_json::from_str(&fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(saved["seed"], 11);
    assert_eq!(saved["format"], "floss-checkpoint");
}

#[test]
fn zero_weight_joint_run_ignores_loss_settings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = format!("{TINY}\n").replace("[training]\n", "[training]\nscheme = \"joint\"\nfloss_weight = 0.0\n");
    let a = write(d, "a.toml", &base);
    let b = write(d, "b.toml", &format!("{base}\n[floss]\ntransform = \"dft\"\npooling_scale = 3\nhierarchical = false\n"));
    let ra = without_wall_time(ok_json(&floss(&["train", "--config", s(&a), "--out", s(&d.join("a"))])));
    let rb = without_wall_time(ok_json(&floss(&["train", "--config", s(&b), "--out", s(&d.join("b"))])));
    assert_eq!(ra, rb);
}

#[test]
fn sweeps_emit_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "c.toml", &TINY.replace("[training]\n", "[training]\nscheme = \"joint\"\n"));
    let cases: [(&str, &[&str]); 4] = [
        ("weight", &["0", "0.1", "0.3", "0.5", "1", "2"]),
        ("tau", &["tau=2", "tau=3", "tau=4", "tau=8"]),
        ("transform", &["FFT+FFT", "FFT+DCT", "DCT+FFT"]),
        ("hierarchical", &["hierarchical", "flat"]),
    ];
    for (sweep, settings) in cases {
        let out = d.join(sweep);
        let v = ok_json(&floss(&["ablate", "--config", s(&cfg), "--sweep", sweep, "--out", s(&out)]));
        assert_valid("ablation.schema.json", &v);
        let got: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["setting"].as_str().unwrap()).collect();
        assert_eq!(got, settings);
        let table = fs::read_to_string(out.join("table.csv")).unwrap();
        assert_eq!(table.lines().count(), settings.len() + 1);
        assert!(fs::read_to_string(out.join("ablation.svg")).unwrap().contains("<svg"));
    }
}

#[test]
fn linear_in_representation_fixture_is_fit() {
    // past the receptive field a noiseless period-6 stream cycles through six
    // representation vectors in an 8-dimensional space, so the next values
    // are an exact affine function of the representation
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = TINY
        .replace("noise_std = 0.1", "noise_std = 0.0")
        .replace("n_series = 2", "n_series = 1")
        .replace("periods = [12.0]", "periods = [6.0]")
        .replace("length = 600", "length = 6000");
    let cfg = write(d, "c.toml", &text);
    let ckpt = d.join("m.json");
    ok_json(&floss(&["train", "--config", s(&cfg), "--out-checkpoint", s(&ckpt), "--out", s(d)]));
    let v = ok_json(&floss(&["evaluate", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--task", "forecast", "--out", s(d)]));
    assert!(v["mse"].as_f64().unwrap() < 1e-4, "{v}");
}

#[test]
fn self_supervised_floss_curve_does_not_rise() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // with reconstruction weighted equally the growing representation scale
    // lifts the frequency term for a few epochs, so it is down-weighted here
    let text = TINY
        .replace("[training]\n", "[training]\ncompanion_weight = 0.1\n")
        .replace("batch_size = 2", "batch_size = 8")
        .replace("epochs = 2", "epochs = 8")
        .replace("steps_per_epoch = 3", "steps_per_epoch = 20");
    let cfg = write(d, "c.toml", &text);
    let mut curves = Vec::new();
    let monotone = (0..5)
        .filter(|seed| {
            let seed = seed.to_string();
            let v = ok_json(&floss(&["train", "--config", s(&cfg), "--seed", &seed, "--out", s(d)]));
            let curve: Vec<f64> = v["epochs"].as_array().unwrap().iter().map(|e| e["floss"].as_f64().unwrap()).collect();
            let ok = curve.windows(2).all(|w| w[1] <= w[0]);
            curves.push(curve);
            ok
        })
        .count();
    assert!(monotone >= 4, "{monotone}/5 nonincreasing: {curves:?}");
}
