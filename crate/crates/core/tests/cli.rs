use std::path::Path;
use std::process::{Command, Output};

fn ssae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssae")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ssae(args);
    assert!(out.status.success(), "ssae {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = ssae(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&["synth", "--spec", "stripes", "--side", "32", "--n-train", "10", "--n-test", "4", "--seed", "3", "--out", s(dir)]);
}

#[test]
fn help_lists_commands() {
    let text = ok(&["--help"]);
    for cmd in ["synth", "train", "calibrate", "infer", "eval", "replay"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["synth", "--out", s(tmp.path())]).0, 2);
    assert_eq!(code(&["frobnicate"]).0, 2);
    let (c, err) = code(&["synth", "--spec", "marble", "--out", s(&tmp.path().join("m"))]);
    assert_eq!(c, 2);
    assert!(err.contains("marble"), "{err}");
}

#[test]
fn synth_refuses_non_empty_dir_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    assert_eq!(code(&["synth", "--spec", "stripes", "--side", "32", "--seed", "3", "--out", s(&data)]).0, 2);
    ok(&["synth", "--spec", "checker", "--side", "32", "--n-train", "4", "--n-test", "2", "--seed", "3", "--out", s(&data), "--force"]);
    assert_eq!(std::fs::read_dir(data.join("train/good")).unwrap().count(), 4);
}

#[test]
fn invalid_training_settings_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("run");
    let (c, err) = code(&["train", "--data", s(&data), "--out", s(&out), "--lambda", "1.5", "--seed", "1"]);
    assert_eq!(c, 2);
    assert!(err.contains("lambda"), "{err}");
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&out), "--schedule", "33:10", "--seed", "1"]).0, 2);
    assert_eq!(code(&["train", "--data", s(&data), "--out", s(&out), "--schedule", "bogus", "--seed", "1"]).0, 2);
    // a missing dataset is a runtime failure, not a usage error
    let (c, _) = code(&["train", "--data", s(&tmp.path().join("none")), "--out", s(&out), "--schedule", "32:2", "--seed", "1"]);
    assert_eq!(c, 1);
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "version = 1\n[model]\nbase_width = 4\n[train]\nbatch_size = 3\n[train.objective]\nvariant = \"v3\"\nlambda = 0.3\n",
    )
    .unwrap();
    let args = ["train", "--dry-run", "--data", "d", "--out", "o", "--config", s(&cfg), "--schedule", "32:5"];
    let text = ok(&[&args[..], &["--lambda", "0.2"]].concat());
    let resolved: toml::Table = toml::from_str(&text.lines().take_while(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")).unwrap();
    let train = resolved["train"].as_table().unwrap();
    assert_eq!(train["batch_size"].as_integer(), Some(3));
    assert_eq!(train["objective"]["variant"].as_str(), Some("v3"));
    assert_eq!(train["objective"]["lambda"].as_float(), Some(0.2));
    // objective defaults survive a partial table
    assert_eq!(train["objective"]["eps"].as_float(), Some(1e-6));
    assert_eq!(resolved["model"]["base_width"].as_integer(), Some(4));
    assert_eq!(resolved["model"]["input_side"].as_integer(), Some(32));
    // omitted seeds are generated and shown
    assert!(train["seed"].as_integer().is_some());

    std::fs::write(&cfg, "[train]\nbatch_sise = 3\n").unwrap();
    let (c, err) = code(&args);
    assert_eq!(c, 2);
    assert!(err.contains("batch_sise"), "{err}");
}

#[test]
fn pipeline_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let run = tmp.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--out", s(&run), "--schedule", "32:6", "--batch-size", "2", "--base-width", "2",
        "--sdc-stacks", "1", "--seed", "4", "--validation-fraction", "0.3",
    ]);
    for f in ["final.ckpt", "best.ckpt", "loss.csv", "audit.csv", "run_config.toml", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,side,train_loss,val_criterion"));
    assert_eq!(loss.lines().count(), 7);

    let (c, err) = code(&["infer", "--run", s(&run), s(&data.join("test"))]);
    assert_eq!(c, 2);
    assert!(err.contains("calibrate"), "{err}");

    ok(&["calibrate", "--run", s(&run), "--data", s(&data)]);
    let printed = ok(&["infer", "--run", s(&run), s(&data.join("test/good")), s(&data.join("test/blob"))]);
    assert_eq!(printed.lines().count(), 3);
    let infer = run.join("infer");
    let files: Vec<String> = std::fs::read_dir(&infer).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    // both directories hold 000.png; the second gets a prefixed name
    assert!(files.contains(&"000_heatmap.npy".to_string()) && files.contains(&"blob_000_heatmap.npy".to_string()), "{files:?}");
    assert_eq!(files.len(), 3 * 5);
    let comps: serde_json::Value = serde_json::from_slice(&std::fs::read(infer.join("000_components.json")).unwrap()).unwrap();
    assert!(comps["threshold"].as_f64().is_some() && comps["components"].is_array());

    ok(&["eval", "--run", s(&run), "--data", s(&data)]);
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    let commands: Vec<&str> = manifest["entries"].as_array().unwrap().iter().map(|e| e["command"].as_str().unwrap()).collect();
    assert_eq!(commands, ["train", "calibrate", "infer", "eval"]);
    let seeds = &manifest["entries"][0]["seeds"];
    assert_eq!(seeds["seed"].as_u64(), Some(4));
    assert!(seeds["init_seed"].as_u64().is_some() && seeds["validation_seed"].as_u64().is_some());
}
