//! End-to-end behaviour of the `statecnn` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use statecnn::data::synthetic;

fn statecnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statecnn"))
        .args(args)
        .env_remove("STATECNN_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(path: &Path, manifest: &Path, stage1: usize, stage2: usize) {
    let cfg = json!({
        "dataset": {"manifest": manifest, "image_side": 48},
        "model": {"backbone": {"kind": "tiny_trainable", "units": 4, "channels": 4}},
        "stage1": {"epochs": stage1},
        "stage2": {"epochs": stage2, "unfreeze_top_k": 2},
        "batch_size": 8,
        "seeds": {"master": 4},
    });
    fs::write(path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn inspect_prints_the_head_table() {
    let o = statecnn(&["inspect"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Total params: 22,420,131"));
    assert!(out.contains("dense_2 (Dense)"));
    assert!(out.lines().any(|l| l.starts_with("# time:")));
}

#[test]
fn one_block_preset_drops_a_conv_set() {
    let o = statecnn(&["inspect", "--preset", "one-block"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("conv2d_1"));
    assert!(!out.contains("conv2d_2"));
    let bad = statecnn(&["inspect", "--preset", "no-such"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn presets_list_and_render_valid_configs() {
    let list = stdout(&statecnn(&["preset"]));
    assert_eq!(list.lines().count(), 5);
    assert!(!list.contains("# time"));
    let o = statecnn(&["preset", "two-block-finetune-best"]);
    assert!(o.status.success());
    let cfg: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cfg["stage1"]["epochs"], 100);
    assert_eq!(cfg["stage2"]["epochs"], 31);
    assert_eq!(cfg["stage2"]["init_from"], "best");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, stdout(&o)).unwrap();
    assert!(statecnn(&["inspect", "--config", path.to_str().unwrap()])
        .status
        .success());
    assert_eq!(statecnn(&["preset", "nope"]).status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(
        &path,
        r#"{"foo": 1, "model": {"bar": 2}, "stage1": {"optimizer": {"name": "adam", "beta3": 0}}}"#,
    )
    .unwrap();
    let o = statecnn(&["inspect", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for key in ["foo", "model.bar", "stage1.optimizer.beta3"] {
        assert!(err.contains(key), "{err}");
    }
}

#[test]
fn prepare_rejects_missing_or_empty_roots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = statecnn(&[
        "prepare",
        "--data",
        "/definitely/not/here",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = statecnn(&[
        "prepare",
        "--data",
        empty.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("split.json").exists());
}

#[test]
fn prepare_seed_comes_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthetic::write_tree(&data, 3, 10, 8, 0).unwrap();
    let run = |out: &str, seed: Option<&str>, env: Option<&str>| {
        let out = dir.path().join(out);
        let mut args = vec![
            "prepare",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_statecnn"));
        cmd.args(&args).env_remove("STATECNN_SEED");
        if let Some(e) = env {
            cmd.env("STATECNN_SEED", e);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("split.json")).unwrap()
    };
    let flag = run("a", Some("17"), None);
    let env = run("b", None, Some("17"));
    let other = run("c", Some("18"), None);
    let flag_wins = run("d", Some("17"), Some("99"));
    assert_eq!(flag, env);
    assert_eq!(flag, flag_wins);
    assert_ne!(flag, other);
    let m: Value = serde_json::from_slice(&flag).unwrap();
    assert_eq!(m["train"].as_array().unwrap().len(), 24);
    assert_eq!(m["val"].as_array().unwrap().len(), 6);

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_statecnn"));
    let bad = cmd
        .args([
            "prepare",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.path().join("e").to_str().unwrap(),
        ])
        .env("STATECNN_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn stage_two_alone_needs_stage_one_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthetic::write_tree(&data, 2, 4, 8, 0).unwrap();
    let prep = dir.path().join("prep");
    assert!(statecnn(&[
        "prepare",
        "--data",
        data.to_str().unwrap(),
        "--out",
        prep.to_str().unwrap()
    ])
    .status
    .success());
    let cfg = dir.path().join("c.json");
    let mut v: Value = json!({
        "dataset": {"manifest": prep.join("split.json"), "image_side": 32},
        "model": {"classes": 2, "backbone": {"kind": "tiny_trainable", "units": 2, "channels": 2}},
        "stage2": {"unfreeze_top_k": 1},
    });
    fs::write(&cfg, v.to_string()).unwrap();
    let o = statecnn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--stage",
        "2",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    v["model"]["classes"] = json!(3);
    fs::write(&cfg, v.to_string()).unwrap();
    let o = statecnn(&["train", "--config", cfg.to_str().unwrap(), "--stage", "1"]);
    assert_eq!(o.status.code(), Some(2), "class count mismatch is a config error");
}

#[test]
fn missing_checkpoint_is_a_state_error() {
    let o = statecnn(&["evaluate", "--checkpoint", "/nope.ckpt", "--data", "/tmp"]);
    assert_eq!(o.status.code(), Some(3));
    let o = statecnn(&["predict", "--checkpoint", "/nope.ckpt", "--image", "/x.png"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn prepare_train_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthetic::write_tree(&data, 7, 5, 24, 1).unwrap();
    let prep = dir.path().join("prep");
    let o = statecnn(&[
        "prepare",
        "--data",
        data.to_str().unwrap(),
        "--out",
        prep.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("diced") && table.contains("total"));
    assert!(table
        .lines()
        .any(|l| l.split_whitespace().collect::<Vec<_>>() == ["total", "28", "7"]));

    let cfg = dir.path().join("cfg").join("run.json");
    fs::create_dir_all(cfg.parent().unwrap()).unwrap();
    write_config(&cfg, &prep.join("split.json"), 2, 1);
    let o = statecnn(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("stage ")).count(), 3);
    // relative output_dir resolves next to the config file
    let run = cfg.parent().unwrap().join("runs");
    assert!(run.join("metrics.csv").is_file());
    let selected = out.lines().find_map(|l| l.strip_prefix("selected: ")).unwrap();
    let ckpt = selected.split(" (").next().unwrap();
    assert!(Path::new(ckpt).is_file());

    let o = statecnn(&[
        "evaluate",
        "--checkpoint",
        ckpt,
        "--data",
        prep.join("split.json").to_str().unwrap(),
        "--json",
        "-",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let start = text.find('{').unwrap();
    let end = text.rfind('}').unwrap();
    let eval: Value = serde_json::from_str(&text[start..=end]).unwrap();
    let total: u64 = eval["confusion"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 7);
    assert!(text.contains("confusion"));

    let o = statecnn(&["evaluate", "--checkpoint", ckpt, "--data", data.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("(35 samples)"));

    let other = dir.path().join("other");
    synthetic::write_tree(&other, 3, 2, 24, 1).unwrap();
    let o = statecnn(&["evaluate", "--checkpoint", ckpt, "--data", other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("class"));

    let img = data.join("sliced").join("0000.png");
    let o = statecnn(&["predict", "--checkpoint", ckpt, "--image", img.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("prediction: "));
    let probs: f64 = text
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("  "))
        .map(|l| l.split_whitespace().last().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((probs - 1.0).abs() < 1e-4);

    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    let o = statecnn(&["predict", "--checkpoint", ckpt, "--image", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn without_timing(s: &str) -> String {
    s.lines()
        .filter(|l| !l.starts_with("# time:"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn commands_agree_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synthetic::write_tree(&data, 7, 3, 24, 6).unwrap();
    let prep = dir.path().join("prep");
    assert!(statecnn(&[
        "prepare",
        "--data",
        data.to_str().unwrap(),
        "--out",
        prep.to_str().unwrap()
    ])
    .status
    .success());
    let cfg = dir.path().join("c.json");
    write_config(&cfg, &prep.join("split.json"), 2, 1);
    let train = |out: &str| {
        let o = statecnn(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join(out).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        without_timing(&stdout(&o))
    };
    let (a, b) = (train("r1"), train("r2"));
    let metric_lines = |s: &str| {
        s.lines()
            .filter(|l| l.starts_with("stage "))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(metric_lines(&a), metric_lines(&b));

    let ckpt = dir.path().join("r1").join("stage2_epoch001.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let o = statecnn(&[
        "evaluate",
        "--checkpoint",
        ckpt,
        "--data",
        data.to_str().unwrap(),
        "--json",
        "-",
    ]);
    let text = stdout(&o);
    let eval: Value = serde_json::from_str(&text[text.find('{').unwrap()..=text.rfind('}').unwrap()]).unwrap();

    let mut correct = 0;
    let mut n = 0;
    for class in fs::read_dir(&data).unwrap() {
        let class = class.unwrap();
        let name = class.file_name().into_string().unwrap();
        for img in fs::read_dir(class.path()).unwrap() {
            let img = img.unwrap().path();
            let first = stdout(&statecnn(&[
                "predict",
                "--checkpoint",
                ckpt,
                "--image",
                img.to_str().unwrap(),
            ]));
            let second = stdout(&statecnn(&[
                "predict",
                "--checkpoint",
                ckpt,
                "--image",
                img.to_str().unwrap(),
            ]));
            assert_eq!(without_timing(&first), without_timing(&second));
            let top = first.lines().next().unwrap().strip_prefix("prediction: ").unwrap();
            let top_name = top.split(' ').next().unwrap();
            let listed = first.lines().nth(1).unwrap().split_whitespace().next().unwrap();
            assert_eq!(top_name, listed, "top-1 is the first of the sorted list");
            correct += usize::from(top_name == name);
            n += 1;
        }
    }
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!(
        (acc - correct as f64 / n as f64).abs() < 1e-12,
        "evaluate {acc} vs predict tally {correct}/{n}"
    );
}
