mod common;

use common::*;
use serde_json::json;

fn mlp_config(dir: &std::path::Path, epochs: usize) -> std::path::PathBuf {
    mlp_config_in(dir, dir, epochs)
}

fn mlp_config_in(
    dir: &std::path::Path,
    data: &std::path::Path,
    epochs: usize,
) -> std::path::PathBuf {
    let cfg = json!({
        "model": "mlp",
        "hidden_sizes": [20],
        "output_activation": "softmax",
        "learning_rate": 0.5,
        "batch_size": 10,
        "epochs_finetune": epochs,
        "data": { "dir": data }
    });
    write(&dir.join("cfg.json"), &cfg.to_string())
}

#[test]
fn train_then_eval_agree() {
    let tmp = tempfile::tempdir().unwrap();
    write_idx_fixture(tmp.path(), 100, 50, 8, 4);
    let cfg = mlp_config(tmp.path(), 1);
    let model = tmp.path().join("m.json");
    let out = cli(&[
        "train",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trained = printed_error(&out);
    assert!((0.0..=1.0).contains(&trained));
    assert!(model.is_file());
    let curve = std::fs::read_to_string(tmp.path().join("m.finetune.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_loss,val_error\n1,"));

    let out = cli(&[
        "eval",
        model.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(printed_error(&out).to_bits(), trained.to_bits());
}

#[test]
fn same_seed_same_output() {
    let tmp = tempfile::tempdir().unwrap();
    write_idx_fixture(tmp.path(), 100, 50, 8, 4);
    let cfg = mlp_config(tmp.path(), 3);
    let model = tmp.path().join("m.json");
    let run = |seed: &str| {
        let out = cli(&[
            "train",
            cfg.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        (stdout(&out), std::fs::read(&model).unwrap())
    };
    let a = run("5");
    assert_eq!(a, run("5"));
    assert_ne!(a.1, run("6").1);
}

#[test]
fn stacked_models_write_pretraining_curves() {
    let tmp = tempfile::tempdir().unwrap();
    write_idx_fixture(tmp.path(), 60, 30, 8, 3);
    for (kind, model) in [("dbn", "d.json"), ("sdae", "s.json")] {
        let cfg = json!({
            "model": kind, "hidden_sizes": [12, 6], "batch_size": 10,
            "epochs_pretrain": 2, "epochs_finetune": 2, "learning_rate": 0.3,
            "data": { "dir": tmp.path() }
        });
        let cfg = write(&tmp.path().join(format!("{kind}.json")), &cfg.to_string());
        let out = cli(&[
            "train",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join(model).to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{kind}: {}", stderr(&out));
        let stem = model.trim_end_matches(".json");
        for layer in 1..=2 {
            let curve =
                std::fs::read_to_string(tmp.path().join(format!("{stem}.pretrain{layer}.csv")))
                    .unwrap();
            assert_eq!(curve.lines().count(), 3, "{curve}");
        }
    }
}

#[test]
fn missing_data_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mlp_config_in(tmp.path(), &tmp.path().join("nowhere"), 1);
    let out = cli(&[
        "train",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}

#[test]
fn invalid_config_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        &tmp.path().join("bad.json"),
        r#"{"learning_rate": -1, "momentum": 1.5, "batchsize": 10, "hidden_sizes": [0]}"#,
    );
    let out = cli(&["train", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for field in ["learning_rate", "momentum", "batchsize", "hidden_sizes"] {
        assert!(err.contains(field), "{field} missing from {err}");
    }
}

#[test]
fn eval_rejects_width_mismatch_and_bad_versions() {
    let tmp = tempfile::tempdir().unwrap();
    write_idx_fixture(tmp.path(), 40, 20, 8, 4);
    let cfg = mlp_config(tmp.path(), 1);
    let model = tmp.path().join("m.json");
    assert!(cli(&[
        "train",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap()
    ])
    .status
    .success());

    let other = tmp.path().join("other");
    std::fs::create_dir(&other).unwrap();
    write_idx_fixture(&other, 10, 10, 6, 4);
    let out = cli(&[
        "eval",
        model.to_str().unwrap(),
        "--data-dir",
        other.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("64") && err.contains("36"), "{err}");

    let text = std::fs::read_to_string(&model).unwrap();
    let bumped = write(
        &tmp.path().join("v2.json"),
        &text.replacen("\"format_version\":1", "\"format_version\":2", 1),
    );
    let out = cli(&[
        "eval",
        bumped.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("format_version"), "{}", stderr(&out));
}

#[test]
fn memorized_training_set_evaluates_to_zero() {
    let tmp = tempfile::tempdir().unwrap();
    write_idx_fixture(tmp.path(), 12, 12, 4, 4);
    let cfg = json!({
        "model": "mlp", "hidden_sizes": [30], "output_activation": "softmax",
        "learning_rate": 1.0, "momentum": 0.5, "batch_size": 4, "epochs_finetune": 300,
        "data": { "dir": tmp.path(), "test_images": tmp.path().join("train-images-idx3-ubyte"),
                  "test_labels": tmp.path().join("train-labels-idx1-ubyte") }
    });
    let cfg = write(&tmp.path().join("cfg.json"), &cfg.to_string());
    let model = tmp.path().join("m.json");
    let out = cli(&[
        "train",
        cfg.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = cli(&[
        "eval",
        model.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(printed_error(&out), 0.0);
}

#[test]
fn gradcheck_default_config() {
    let out = cli(&["gradcheck", "--seeds", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let v: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_relative_error="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(v <= 1e-5);
    assert!(text.contains("gradcheck=PASS"));
}

#[test]
fn resize_halves_images_and_keeps_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.csv");
    let output = tmp.path().join("out.csv");
    write_csv_fixture(&input, 14, 48, 7, true, 3);
    let out = cli(&[
        "resize",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
        "--has-header",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let src = layerwise::data::load_csv(&input, true).unwrap();
    let dst = layerwise::data::load_csv(&output, false).unwrap();
    assert_eq!(dst.pixels.shape(), (14, 576));
    assert_eq!(dst.labels, src.labels);
}

#[test]
fn one_value_sweep_writes_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    write_idx_fixture(tmp.path(), 40, 20, 6, 3);
    let spec = json!({
        "defaults": { "model": "mlp", "hidden_sizes": [10], "batch_size": 10, "data": { "dir": tmp.path() } },
        "axes": [ { "name": "l2", "values": [1e-4] } ],
        "epochs_finetune": 1
    });
    let spec = write(&tmp.path().join("sweep.json"), &spec.to_string());
    let results = tmp.path().join("r.jsonl");
    let optimal = tmp.path().join("best.json");
    let out = cli(&[
        "sweep",
        spec.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
        "--optimal",
        optimal.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&results).unwrap();
    assert_eq!(text.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(line["parameter_name"], "l2");
    assert!(line["test_error"].is_f64());
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&optimal).unwrap()).unwrap();
    assert_eq!(best["l2"], 1e-4);
}

#[test]
fn usage_errors() {
    assert!(cli(&["--help"]).status.success());
    assert_eq!(cli(&["train"]).status.code(), Some(1));
    assert_eq!(cli(&["gradcheck", "--threads", "0"]).status.code(), Some(1));
}
