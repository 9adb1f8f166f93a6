mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::world_data;
use protogate::io::embeddings::{write_embedding_table, write_embeddings, EmbeddingFormat, EmbeddingTable};

fn protogate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protogate")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn build_infer_tune_evaluate_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    write_embeddings(&world_data(3, 8, 80, 1, 0), &p("train.csv"), EmbeddingFormat::Csv).unwrap();
    write_embeddings(&world_data(3, 8, 30, 1, 1), &p("val.bin"), EmbeddingFormat::Bin).unwrap();

    assert_ok(&protogate(&[
        "build-bank", "--embeddings", s(&p("train.csv")), "--k", "2", "--seed", "3", "--out", s(&p("bank.json")),
    ]));
    assert_ok(&protogate(&[
        "tune", "--val", s(&p("val.bin")), "--bank", s(&p("bank.json")), "--objective", "macro_f1",
        "--out", s(&p("tune.csv")), "--best", s(&p("gate.json")), "--tuned-bank", s(&p("tuned.json")),
    ]));
    assert!(fs::read_to_string(p("tune.csv")).unwrap().starts_with("theta_gate,"));
    assert_ok(&protogate(&[
        "infer", "--embeddings", s(&p("val.bin")), "--bank", s(&p("tuned.json")), "--gate", s(&p("gate.json")),
        "--out", s(&p("pred.csv")),
    ]));
    assert_ok(&protogate(&[
        "evaluate", "--pred", s(&p("pred.csv")), "--labels", s(&p("val.bin")), "--out", s(&p("report.json")),
    ]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("report.json")).unwrap()).unwrap();
    assert_eq!(report["num_samples"], 90);
    assert_eq!(report["ece_bins"], 15);
    assert_ok(&protogate(&[
        "sweep", "--embeddings", s(&p("val.bin")), "--bank", s(&p("bank.json")),
        "--param", "theta_gate", "--values", "0.5,0.7,0.9",
        "--param", "alpha_low", "--values", "0.2,0.4",
        "--out", s(&p("sweep.csv")),
    ]));
    assert_eq!(fs::read_to_string(p("sweep.csv")).unwrap().lines().count(), 1 + 6);
}

#[test]
fn simulate_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    assert_ok(&protogate(&["simulate", "--scenario", "two-expert", "--seed", "5", "--out", s(&out)]));
    for f in ["checks.csv", "predictions.csv", "truth.csv", "bank.json", "gate.json", "config.json", "sweep.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let checks = fs::read_to_string(out.join("checks.csv")).unwrap();
    assert!(!checks.contains(",fail"), "{checks}");
}

#[test]
fn run_with_and_without_test_labels() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    write_embeddings(&world_data(3, 8, 80, 2, 0), &p("train.csv"), EmbeddingFormat::Csv).unwrap();
    let test = world_data(3, 8, 20, 2, 1);
    write_embeddings(&test, &p("test.csv"), EmbeddingFormat::Csv).unwrap();
    let hidden = EmbeddingTable { data: test, labeled: false };
    write_embedding_table(&hidden, &p("hidden.csv"), EmbeddingFormat::Csv).unwrap();

    assert_ok(&protogate(&["run", "--train", s(&p("train.csv")), "--test", s(&p("test.csv")), "--out", s(&p("a"))]));
    assert!(p("a").join("report.json").exists());

    let out = protogate(&["run", "--train", s(&p("train.csv")), "--test", s(&p("hidden.csv")), "--out", s(&p("b"))]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("test labels withheld"));
    assert!(!p("b").join("report.json").exists());
    assert_eq!(fs::read(p("a").join("predictions.csv")).unwrap(), fs::read(p("b").join("predictions.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f);
    assert_eq!(code(&protogate(&["--help"])), 0);
    assert_eq!(code(&protogate(&["frobnicate"])), 1);
    assert_eq!(code(&protogate(&["infer", "--embeddings", s(&p("missing.csv")), "--bank", "x", "--out", "y"])), 1);

    fs::write(p("bad.json"), "{\"theta\": 2}").unwrap();
    assert_eq!(code(&protogate(&["simulate", "--config", s(&p("bad.json")), "--out", s(&p("sim"))])), 1);

    write_embeddings(&world_data(2, 3, 10, 0, 0), &p("d.csv"), EmbeddingFormat::Csv).unwrap();
    fs::write(
        p("bank.json"),
        r#"{"version":1,"num_classes":2,"dim":3,"kappa":20.0,"tau_sim":0.1,"seed":0,
            "prototypes":[[[1.0,0.0,0.0]],[[0.0,2.0,0.0]]]}"#,
    )
    .unwrap();
    let out = protogate(&["infer", "--embeddings", s(&p("d.csv")), "--bank", s(&p("bank.json")), "--out", s(&p("o.csv"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
