mod common;

use std::path::Path;
use std::process::{Command, Output};

use confies_cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn confies(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confies"))
        .args(args)
        .env_remove("CONFIES_CHECKPOINT")
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(std::iter::once("confies").chain(args.iter().copied()))
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(code(&[]), EXIT_USAGE);
    assert_eq!(code(&["render", "--out", "x.png", "--alpha", "nope"]), EXIT_USAGE);
    assert_eq!(code(&["eval", "sideways"]), EXIT_USAGE);
}

#[test]
fn help_exits_0() {
    for sub in [
        vec!["--help"],
        vec!["preprocess", "--help"],
        vec!["synth-gen", "--help"],
        vec!["train", "--help"],
        vec!["render", "--help"],
        vec!["eval", "icc", "--help"],
        vec!["eval", "transfer", "--help"],
        vec!["serve", "--help"],
    ] {
        assert_eq!(code(&sub), EXIT_OK, "{sub:?}");
    }
}

#[test]
fn missing_checkpoint_flag_is_named() {
    let out = confies(&["render", "--out", "x.png"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--checkpoint"), "{err}");
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = confies(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.cnfs");
    let out = dir.path().join("x.png");
    assert_eq!(
        code(&["render", "--checkpoint", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        EXIT_RUNTIME
    );
    let ckpt = common::tiny_checkpoint(dir.path());
    assert_eq!(
        code(&["render", "--checkpoint", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "bogus=1"]),
        EXIT_RUNTIME
    );
}

#[test]
fn render_writes_png_layers() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = common::tiny_checkpoint(dir.path());
    let ckpt = ckpt.to_str().unwrap();
    for layer in ["color", "mask", "depth"] {
        let out = dir.path().join(format!("{layer}.png"));
        let args = [
            "render", "--checkpoint", ckpt, "--out", out.to_str().unwrap(), "--layer", layer, "--alpha", "-0.5,0.25",
            "--set", "r3_lift=1", "--width", "20", "--height", "12", "--samples", "8",
        ];
        assert_eq!(code(&args), EXIT_OK);
        let bytes = std::fs::read(&out).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let out = confies(&["synth-gen", "--out", path(&data), "--frames", "8", "--size", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());
    let out = confies(&[
        "train", "--data", path(&data), "--out", path(&model), "--iterations", "4", "--holdout", "odd",
        "--checkpoint-every", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = model.join("model.cnfs");
    assert!(ckpt.exists() && model.join("checkpoint_000002.cnfs").exists());
    assert!(model.join("metrics.csv").exists());

    let report = dir.path().join("icc.json");
    let out = confies(&["eval", "icc", "--checkpoint", path(&ckpt), "--points", "3", "--json", path(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("r1_size"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["attributes"].as_array().unwrap().len(), 6);

    let out = confies(&["eval", "decouple", "--checkpoint", path(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("leakage"));

    let out = confies(&["eval", "interp", "--checkpoint", path(&ckpt), "--data", path(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("held-out"));
}

#[test]
fn transfer_renders_one_frame_per_source_row() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = common::tiny_checkpoint(dir.path());
    let csv = dir.path().join("source.csv");
    let mut text = String::from("frame, success, r1_size_r, r2_lift_r\n");
    for i in 0..6 {
        text.push_str(&format!("{i}, 1, {}, -0.5\n", i as f64 / 5.0));
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("transfer");
    let args = [
        "eval", "transfer", "--checkpoint", path(&ckpt), "--source", path(&csv), "--out", path(&out), "--window", "5",
        "--order", "2", "--width", "8", "--height", "8", "--samples", "4",
    ];
    assert_eq!(code(&args), EXIT_OK);
    let pngs = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 6);
    let controls: Vec<Vec<f64>> = serde_json::from_slice(&std::fs::read(out.join("controls.json")).unwrap()).unwrap();
    assert_eq!(controls.len(), 6);
    assert!(controls.iter().all(|c| c[1] == 0.0 && c.iter().all(|v| v.abs() <= 1.0)));
}

#[test]
fn serve_flags_fall_back_to_environment() {
    use clap::Parser;
    use confies_cli::{Cli, Command as Sub};
    std::env::set_var("CONFIES_WORKERS", "7");
    std::env::set_var("CONFIES_CHECKPOINT", "/env/model.cnfs");
    let cli = Cli::try_parse_from(["confies", "serve", "--workers", "2"]).unwrap();
    let Sub::Serve(a) = cli.command else { panic!("expected serve") };
    assert_eq!(a.workers, 2);
    assert_eq!(a.checkpoint, Path::new("/env/model.cnfs"));
    assert_eq!(a.max_dim, 512);
    assert_eq!(a.bind.to_string(), "127.0.0.1:8080");
    let cli = Cli::try_parse_from(["confies", "serve"]).unwrap();
    let Sub::Serve(a) = cli.command else { panic!("expected serve") };
    assert_eq!(a.workers, 7);
    std::env::remove_var("CONFIES_WORKERS");
    std::env::remove_var("CONFIES_CHECKPOINT");
}
