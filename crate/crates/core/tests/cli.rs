use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cspn::cli::{run, EXIT_CONSTRAINT, EXIT_INPUT, EXIT_OK};
use cspn::io;
use cspn::layer::argmax_target;
use cspn::sizes::{assign_salient_pixels, SaliencyStack, DEFAULT_TAU};
use cspn::ChannelStack;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/golden")
        .join(name)
}

fn cspn(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["cspn"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn golden_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = cspn(&[
        "project",
        "--input",
        s(&fixture("input.map")),
        "--constraints",
        s(&fixture("constraints.json")),
        "--output",
        s(dir.path()),
        "--algorithm",
        "sort",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    for name in ["projected.map", "mask.pgm", "summary.json"] {
        let got = std::fs::read(dir.path().join(name)).unwrap();
        let want = std::fs::read(fixture("expected").join(name)).unwrap();
        assert!(got == want, "{name} differs from the frozen fixture");
    }
}

#[test]
fn linear_algorithm_matches_golden_values() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = cspn(&[
        "project",
        "--input",
        s(&fixture("input.map")),
        "--constraints",
        s(&fixture("constraints.json")),
        "--output",
        s(dir.path()),
    ]);
    assert_eq!(code, EXIT_OK);
    let got = io::load_map(dir.path().join("projected.map")).unwrap();
    let want = io::load_map(fixture("expected/projected.map")).unwrap();
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() <= 1e-9);
    }
    assert_eq!(
        std::fs::read(dir.path().join("mask.pgm")).unwrap(),
        std::fs::read(fixture("expected/mask.pgm")).unwrap()
    );
}

#[test]
fn binary_reproduces_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_cspn"))
        .args(["project", "--algorithm", "sort", "--input"])
        .arg(fixture("input.map"))
        .arg("--constraints")
        .arg(fixture("constraints.json"))
        .arg("--output")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("summary.json")).unwrap(),
        std::fs::read(fixture("expected/summary.json")).unwrap()
    );
}

fn write_case(dir: &Path, stack: &ChannelStack, constraints: &str) -> (PathBuf, PathBuf) {
    let map = dir.join("in.map");
    let json = dir.join("c.json");
    io::save_map(&map, stack).unwrap();
    std::fs::write(&json, constraints).unwrap();
    (map, json)
}

#[test]
fn current_sums_leave_the_input_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..3 * 25).map(|_| rng.random::<f64>()).collect();
    let stack = ChannelStack::from_dense(3, 5, 5, data).unwrap();
    let sums = stack.channel_sums();
    let (map, json) = write_case(
        dir.path(),
        &stack,
        &format!("{{\"1\": {}, \"2\": {}}}", sums[1], sums[2]),
    );
    let out = dir.path().join("out");
    let (code, _, _) = cspn(&[
        "project",
        "--input",
        s(&map),
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let got = io::load_map(out.join("projected.map")).unwrap();
    for (a, b) in got.data().iter().zip(stack.data()) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn zero_size_zeroes_the_channel() {
    let dir = tempfile::tempdir().unwrap();
    let stack = ChannelStack::from_dense(2, 2, 2, vec![0.4, 0.3, 0.2, 0.1, 0.6, 0.7, 0.8, 0.9]).unwrap();
    let (map, json) = write_case(dir.path(), &stack, "{\"1\": 0}");
    let out = dir.path().join("out");
    let (code, _, _) = cspn(&[
        "project",
        "--input",
        s(&map),
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let got = io::load_map(out.join("projected.map")).unwrap();
    assert!(got.channel(1).iter().all(|&v| v == 0.0));
    assert!(io::load_pgm(out.join("mask.pgm"))
        .unwrap()
        .labels()
        .iter()
        .all(|&k| k == 0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let stack = ChannelStack::from_dense(2, 2, 2, vec![0.5; 8]).unwrap();
    let out = dir.path().join("out");

    let (map, json) = write_case(dir.path(), &stack, "{\"1\": 4.5}");
    let (code, _, err) = cspn(&[
        "project",
        "--input",
        s(&map),
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_CONSTRAINT, "{err}");

    let (map, json) = write_case(dir.path(), &stack, "{\"1\": -1}");
    let (code, _, _) = cspn(&[
        "project",
        "--input",
        s(&map),
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_CONSTRAINT);

    let (map, json) = write_case(dir.path(), &stack, "{\"7\": 1}");
    let (code, _, _) = cspn(&[
        "project",
        "--input",
        s(&map),
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_CONSTRAINT);

    let (map, json) = write_case(dir.path(), &stack, "not json");
    let (code, _, _) = cspn(&[
        "project",
        "--input",
        s(&map),
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_INPUT);

    std::fs::write(&map, b"CSPN-MAP 1 2 2 2\n0 1\nshort").unwrap();
    let (map, json) = (map, dir.path().join("c2.json"));
    std::fs::write(&json, "{}").unwrap();
    let (code, _, err) = cspn(&[
        "project",
        "--input",
        s(&map),
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("payload"), "{err}");

    let (code, _, _) = cspn(&[
        "project",
        "--input",
        "/nonexistent",
        "--constraints",
        s(&json),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_INPUT);

    let status = Command::new(env!("CARGO_BIN_EXE_cspn"))
        .args(["project"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_INPUT));
}

#[test]
fn all_negative_saliency_estimates_zero() {
    let dir = tempfile::tempdir().unwrap();
    let sal = ChannelStack::new(vec![1, 2], 3, 3, vec![-0.2; 18]).unwrap();
    let map = dir.path().join("sal.map");
    io::save_map(&map, &sal).unwrap();
    let out = dir.path().join("sizes.json");
    let (code, _, err) = cspn(&["estimate-sizes", "--input", s(&map), "--output", s(&out)]);
    assert_eq!(code, EXIT_OK, "{err}");
    let c = io::load_constraints(&out).unwrap();
    assert_eq!(c.get(1), Some(0.0));
    assert_eq!(c.get(2), Some(0.0));

    let (code, _, _) = cspn(&[
        "estimate-sizes",
        "--input",
        s(&map),
        "--output",
        s(&out),
        "--num-classes",
        "4",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(io::load_constraints(&out).unwrap().get(3), Some(0.0));

    let (code, _, _) = cspn(&["estimate-sizes", "--input", s(&map), "--output", s(&out), "--tau", "0"]);
    assert_eq!(code, EXIT_INPUT);
}

#[test]
fn estimate_then_project_recovers_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = (6, 7);
    let sal_data: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sal = ChannelStack::new(vec![1, 2], h, w, sal_data.clone()).unwrap();
    let sal_path = dir.path().join("sal.map");
    io::save_map(&sal_path, &sal).unwrap();
    let sizes_path = dir.path().join("sizes.json");
    let (code, _, _) = cspn(&["estimate-sizes", "--input", s(&sal_path), "--output", s(&sizes_path)]);
    assert_eq!(code, EXIT_OK);
    let sizes = io::load_constraints(&sizes_path).unwrap();

    // heat maps: indicator of the salient assignment, background at 0.5
    let assigned =
        assign_salient_pixels(&SaliencyStack::new(vec![1, 2], h, w, sal_data).unwrap(), DEFAULT_TAU).unwrap();
    let mut maps = vec![0.5; h * w];
    for k in [1u8, 2] {
        maps.extend(assigned.labels().iter().map(|&l| if l == k { 1.0 } else { 0.0 }));
    }
    let heat = ChannelStack::new(vec![0, 1, 2], h, w, maps).unwrap();
    let heat_path = dir.path().join("heat.map");
    io::save_map(&heat_path, &heat).unwrap();
    let out = dir.path().join("out");
    let (code, _, _) = cspn(&[
        "project",
        "--input",
        s(&heat_path),
        "--constraints",
        s(&sizes_path),
        "--output",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let mask = io::load_pgm(out.join("mask.pgm")).unwrap();
    assert_eq!(mask, argmax_target(&io::load_map(out.join("projected.map")).unwrap()));
    for (k, v) in sizes.iter() {
        assert_eq!(mask.count(k) as f64, v);
    }
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(
        &p,
        r#"{"height": 16, "width": 16, "train_scenes": 20, "val_scenes": 6, "epochs": 1}"#,
    )
    .unwrap();
    p
}

#[test]
fn train_demo_is_reproducible_and_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let ckpt = dir.path().join("model.bin");
    let metrics = |name: &str| {
        let out = dir.path().join(name);
        let (code, stdout, err) = cspn(&[
            "train-demo",
            "--config",
            s(&cfg),
            "--seed",
            "3",
            "--output",
            s(&out),
            "--checkpoint",
            s(&ckpt),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(stdout.contains("baseline") && stdout.contains("projection"));
        std::fs::read_to_string(out).unwrap()
    };
    let a = metrics("a.jsonl");
    assert_eq!(a, metrics("b.jsonl"));
    assert_eq!(a.lines().count(), 4);
    for line in a.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["val_miou"].as_f64().is_some());
    }

    let (code, stdout, err) = cspn(&["evaluate", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--seed", "3"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let eval: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let last: serde_json::Value = serde_json::from_str(a.lines().last().unwrap()).unwrap();
    assert_eq!(eval["mean"], last["val_miou"]);
}

#[test]
fn zero_epochs_emits_initial_scores_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (code, stdout, _) = cspn(&["train-demo", "--config", s(&cfg), "--epochs", "0"]);
    assert_eq!(code, EXIT_OK);
    let records: Vec<serde_json::Value> = stdout
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r["epoch"] == 0 && r.get("mean_loss").is_none()));
    // same initial model for both arms
    assert_eq!(records[0]["val_miou"], records[1]["val_miou"]);
}

#[test]
fn seed_environment_variable_sets_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run_bin = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cspn"));
        cmd.args(["train-demo", "--epochs", "0", "--config"]).arg(&cfg);
        cmd.env_remove("CSPN_SEED");
        if let Some(v) = env {
            cmd.env("CSPN_SEED", v);
        }
        if let Some(v) = flag {
            cmd.args(["--seed", v]);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let via_env = run_bin(Some("5"), None);
    assert_eq!(via_env, run_bin(None, Some("5")));
    assert_eq!(run_bin(Some("9"), Some("5")), via_env, "flag wins over env");
    assert_ne!(via_env, run_bin(None, Some("6")));
}

#[test]
fn bench_smoke() {
    let t = Instant::now();
    let (code, stdout, err) = cspn(&["bench", "--trials", "1", "--n", "10"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(t.elapsed().as_secs_f64() < 1.0);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "n,algorithm,median_ns");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("10,sort,") && lines[2].starts_with("10,linear,"));
}
