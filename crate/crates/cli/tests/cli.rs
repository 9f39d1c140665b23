use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use densepath::scene::{load_scenarios, OnError};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_densepath"));
    c.env_remove("DENSEPATH_THREADS").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn gen_train_predict_eval_viz_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt, pred, goals) = (p(dir.path(), "d.jsonl"), p(dir.path(), "m.ckpt"), p(dir.path(), "p.jsonl"), p(dir.path(), "g.jsonl"));
    let (report, csv, svg) = (p(dir.path(), "r.json"), p(dir.path(), "r.csv"), p(dir.path(), "v.svg"));

    ok(&["gen", "--n", "12", "--seed", "3", "--out", s(&data)]);
    let scenarios = load_scenarios(&data, OnError::Abort).unwrap();
    assert_eq!(scenarios.len(), 12);

    let out = ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--epochs", "2", "--batch-size", "4", "--hidden", "8"]);
    let log: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(log.len(), 2);
    assert_eq!(log[1]["epoch"], 1);
    assert!(log[1]["loss"].as_f64().unwrap().is_finite());

    ok(&["predict", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&pred), "--dump-goals", s(&goals), "--k", "6"]);
    let preds = json_lines(&pred);
    assert_eq!(preds.len(), 12);
    for (rec, sc) in preds.iter().zip(&scenarios) {
        assert_eq!(rec["id"], sc.id.as_str());
        let trajs = rec["trajectories"].as_array().unwrap();
        assert_eq!(trajs.len(), 6);
        for t in trajs {
            let t = t.as_array().unwrap();
            assert_eq!(t.len(), 30);
            assert!(t.iter().flat_map(|q| q.as_array().unwrap()).all(|x| x.as_f64().unwrap().is_finite()));
        }
    }
    let fields = json_lines(&goals);
    let phi_sum: f64 = fields[0]["phi"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((phi_sum - 1.0).abs() < 1e-9);

    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&report), "--csv", s(&csv)]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["k"], 6);
    assert!(r["min_fde"].as_f64().unwrap() >= 0.0);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("id,min_ade,min_fde,miss\n"));
    assert_eq!(table.lines().count(), 13);

    let id = scenarios[4].id.as_str();
    ok(&["viz", "--data", s(&data), "--id", id, "--goals", s(&goals), "--pred", s(&pred), "--out", s(&svg)]);
    let doc = std::fs::read_to_string(&svg).unwrap();
    assert!(doc.starts_with("<svg") && doc.trim_end().ends_with("</svg>"));
    assert!(doc.contains("orange") && doc.contains("green") && doc.contains("red"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| p(dir.path(), n);
    ok(&["gen", "--n", "8", "--seed", "5", "--out", s(&d("a.jsonl"))]);
    ok(&["gen", "--n", "8", "--seed", "5", "--out", s(&d("b.jsonl"))]);
    ok(&["gen", "--n", "8", "--seed", "6", "--out", s(&d("c.jsonl"))]);
    let read = |n: &str| std::fs::read(d(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));

    for (name, threads) in [("a.ckpt", "1"), ("b.ckpt", "2")] {
        let status = bin()
            .env("DENSEPATH_THREADS", threads)
            .args(["train", "--data", s(&d("a.jsonl")), "--out", s(&d(name)), "--epochs", "1", "--batch-size", "4", "--hidden", "8", "--seed", "9"])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
}

#[test]
fn long_mode_predicts_goal_triples() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| p(dir.path(), n);
    ok(&["gen", "--n", "4", "--seed", "2", "--horizon-s", "8", "--mix", "0,1,0", "--out", s(&d("d.jsonl"))]);
    ok(&["train", "--data", s(&d("d.jsonl")), "--out", s(&d("m.ckpt")), "--epochs", "1", "--hidden", "8", "--mode", "long"]);
    ok(&["predict", "--ckpt", s(&d("m.ckpt")), "--data", s(&d("d.jsonl")), "--out", s(&d("p.jsonl")), "--n", "2", "--k", "6"]);
    for rec in json_lines(&d("p.jsonl")) {
        let goals = rec["goals"].as_array().unwrap();
        assert_eq!(goals.len(), 6);
        assert!(goals.iter().all(|g| g.as_array().unwrap().len() == 3 && g[0].is_array()));
        assert!(rec["trajectories"].as_array().unwrap().iter().all(|t| t.as_array().unwrap().len() == 80));
    }
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| p(dir.path(), n);
    ok(&["gen", "--n", "4", "--seed", "1", "--out", s(&d("d.jsonl"))]);
    ok(&["train", "--data", s(&d("d.jsonl")), "--out", s(&d("m.ckpt")), "--epochs", "1", "--hidden", "8"]);
    std::fs::write(d("bad.toml"), "batch = 3\n").unwrap();
    std::fs::write(d("junk.jsonl"), "{\"id\": 1}\n").unwrap();
    std::fs::write(d("junk.ckpt"), b"not a checkpoint").unwrap();

    let data = s(&d("d.jsonl")).to_string();
    let ckpt = s(&d("m.ckpt")).to_string();
    let out = s(&d("o")).to_string();
    let (junk_data, junk_ckpt, bad_cfg) = (d("junk.jsonl"), d("junk.ckpt"), d("bad.toml"));
    let failing: Vec<Vec<&str>> = vec![
        vec!["gen", "--n", "4", "--mix", "0.5,0.5", "--out", &out],
        vec!["gen", "--n", "4", "--mix", "0.5,0.6,0.1", "--out", &out],
        vec!["gen", "--n", "4", "--sigma=-1", "--out", &out],
        vec!["train", "--data", "/nonexistent.jsonl", "--out", &out],
        vec!["train", "--data", s(&junk_data), "--out", &out],
        vec!["train", "--data", &data, "--out", &out, "--config", s(&bad_cfg)],
        vec!["predict", "--ckpt", s(&junk_ckpt), "--data", &data, "--out", &out],
        vec!["predict", "--ckpt", &ckpt, "--data", &data, "--out", &out, "--mode", "long"],
        vec!["eval", "--ckpt", &ckpt, "--data", &data, "--hidden", "16"],
        vec!["viz", "--data", &data, "--id", "missing", "--out", &out],
    ];
    for args in &failing {
        assert_eq!(code(args), 1, "{args:?}");
    }
    assert_ne!(code(&["train", "--bogus"]), 0);
    assert_ne!(code(&[]), 0);
    let bad_env = bin().env("DENSEPATH_THREADS", "zero").args(["gen", "--n", "1", "--out", &out]).output().unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
}
