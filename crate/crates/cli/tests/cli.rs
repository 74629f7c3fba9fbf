//! End-to-end tests that drive the compiled binary the way a user would.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stillflow::flowio::{read_flo, write_flo};
use stillflow::imagecore::load_image;
use stillflow::srf::{load_model, predict_image, MotionOutput};
use stillflow::FlowField;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stillflow"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "stillflow {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("no signal")
}

fn synth_corpus(dir: &Path, seed: u64, pairs: usize) -> PathBuf {
    run_ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--pairs",
        &pairs.to_string(),
        "--width",
        "64",
        "--height",
        "64",
        "--margin",
        "10",
    ]);
    dir.join("manifest.tsv")
}

/// Strips the class column so training produces a single forest.
fn unlabeled_copy(manifest: &Path) -> PathBuf {
    let text = fs::read_to_string(manifest).unwrap();
    let stripped: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').take(3).collect::<Vec<_>>().join("\t"))
        .collect();
    let out = manifest.with_file_name("unlabeled.tsv");
    fs::write(&out, stripped.join("\n")).unwrap();
    out
}

fn train_joint(manifest: &Path, out: &Path, seed: u64) {
    run_ok(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trees",
        "3",
        "--max-leaves",
        "24",
        "--patch-size",
        "9",
        "--max-per-frame",
        "120",
        "--seed",
        &seed.to_string(),
    ]);
}

#[test]
fn train_writes_one_model_per_class_with_bounded_leaves() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 1, 4);
    let out = dir.path().join("model.srf");
    run_ok(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trees",
        "2",
        "--max-leaves",
        "8",
        "--patch-size",
        "9",
        "--max-per-frame",
        "80",
    ]);
    for class in ["checker", "stripes"] {
        let path = dir.path().join(format!("model.{class}.srf"));
        let forest = load_model(&path).expect("per-class model loads");
        assert_eq!(forest.trees.len(), 2);
        assert!(forest.trees.iter().all(|t| t.leaf_count() <= 8));
        assert_eq!(forest.patch_size, 9);
    }
    assert!(
        !out.exists(),
        "suffix-less path should not be written in class mode"
    );
}

#[test]
fn config_file_applies_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = unlabeled_copy(&synth_corpus(dir.path(), 2, 2));
    let cfg = dir.path().join("forest.cfg");
    fs::write(&cfg, "trees=4\nmax_leaves=6\nseed=11\n").unwrap();
    let out = dir.path().join("model.srf");
    run_ok(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--patch-size",
        "9",
        "--max-per-frame",
        "60",
        "--trees",
        "2",
    ]);
    let forest = load_model(&out).unwrap();
    assert_eq!(forest.trees.len(), 2, "--trees must beat the config file");
    assert_eq!(
        forest.config.max_leaves, 6,
        "file value sticks when no flag is given"
    );
    assert_eq!(forest.config.seed, 11);
}

#[test]
fn predict_matches_the_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = unlabeled_copy(&synth_corpus(dir.path(), 3, 4));
    let model_path = dir.path().join("model.srf");
    train_joint(&manifest, &model_path, 7);

    let image_path = dir.path().join("frames/pair_000_a.png");
    let cli_out = dir.path().join("cli.flo");
    run_ok(&[
        "predict",
        "--model",
        model_path.to_str().unwrap(),
        "--image",
        image_path.to_str().unwrap(),
        "--out",
        cli_out.to_str().unwrap(),
    ]);

    let forest = load_model(&model_path).unwrap();
    let frame = load_image(&image_path).unwrap();
    let MotionOutput::Flow(flow) = predict_image(&forest, &frame, 1)
        .unwrap()
        .to_output()
        .unwrap()
    else {
        panic!("flow model must yield flow")
    };
    let lib_out = dir.path().join("lib.flo");
    write_flo(&flow, &lib_out).unwrap();
    assert_eq!(
        fs::read(&cli_out).unwrap(),
        fs::read(&lib_out).unwrap(),
        "the CLI must add nothing to the library prediction"
    );
}

#[test]
fn predict_with_two_models_suffixes_outputs_by_model_stem() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 4, 4);
    let out = dir.path().join("model.srf");
    run_ok(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trees",
        "2",
        "--max-leaves",
        "8",
        "--patch-size",
        "9",
        "--max-per-frame",
        "60",
    ]);
    let image = dir.path().join("frames/pair_000_a.png");
    let pred = dir.path().join("pred.flo");
    run_ok(&[
        "predict",
        "--model",
        dir.path().join("model.checker.srf").to_str().unwrap(),
        "--model",
        dir.path().join("model.stripes.srf").to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert!(dir.path().join("pred.model.checker.flo").exists());
    assert!(dir.path().join("pred.model.stripes.flo").exists());
}

#[test]
fn predict_warns_about_uncovered_pixels_and_leaves_them_zero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = unlabeled_copy(&synth_corpus(dir.path(), 5, 2));
    let model_path = dir.path().join("model.srf");
    train_joint(&manifest, &model_path, 1);

    let image_path = dir.path().join("frames/pair_000_a.png");
    let out = dir.path().join("gappy.flo");
    let output = run_ok(&[
        "predict",
        "--model",
        model_path.to_str().unwrap(),
        "--image",
        image_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--stride",
        "60",
    ]);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("no patch votes"),
        "missing warning: {stderr}"
    );
    let flow = read_flo(&out).unwrap();
    // Stride 60 leaves everything outside the single patch untouched.
    assert_eq!(flow.u(60, 60), 0.0);
    assert_eq!(flow.v(60, 60), 0.0);
}

#[test]
fn eval_scores_perfect_and_zero_predictions_exactly() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 6, 2);
    let truth = dir.path().join("flow/pair_000.flo");
    let image = dir.path().join("frames/pair_000_a.png");

    // Truth against itself: no error, full direction agreement.
    let out = run_ok(&[
        "eval",
        "--pred",
        truth.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0]["epe"].as_f64().unwrap(), 0.0);
    assert_eq!(rows[0]["direction"].as_f64().unwrap(), 100.0);

    // An all-zero prediction scores exactly the zero baseline.
    let zeros = dir.path().join("zeros.flo");
    let t = read_flo(&truth).unwrap();
    write_flo(&FlowField::zeros(t.width(), t.height()), &zeros).unwrap();
    let out = run_ok(&[
        "eval",
        "--pred",
        zeros.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0]["epe"], rows[0]["zero_epe"]);
    // A zero prediction offers no usable angle anywhere, by convention.
    assert_eq!(rows[0]["n_points"].as_u64().unwrap(), 0);
    assert_eq!(rows[0]["direction"].as_f64().unwrap(), 0.0);
}

#[test]
fn eval_manifest_mode_emits_per_frame_rows_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 7, 3);
    let unlabeled = unlabeled_copy(&manifest);
    let model_path = dir.path().join("model.srf");
    train_joint(&unlabeled, &model_path, 2);

    let out = run_ok(&[
        "eval",
        "--pred",
        model_path.to_str().unwrap(),
        "--manifest",
        unlabeled.to_str().unwrap(),
        "--json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4, "3 frames + 1 aggregate");
    assert!(rows[3]["name"].as_str().unwrap().contains("all"));
    let total: u64 = rows[..3]
        .iter()
        .map(|r| r["n_points"].as_u64().unwrap())
        .sum();
    assert_eq!(rows[3]["n_points"].as_u64().unwrap(), total);
}

#[test]
fn detect_unexpected_flags_exactly_the_reversed_frame() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = unlabeled_copy(&synth_corpus(dir.path(), 8, 4));
    let model_path = dir.path().join("model.srf");
    train_joint(&manifest, &model_path, 3);

    let frame = dir.path().join("frames/pair_000_a.png");
    let truth = read_flo(dir.path().join("flow/pair_000.flo")).unwrap();
    let mut reversed = FlowField::zeros(truth.width(), truth.height());
    for y in 0..truth.height() {
        for x in 0..truth.width() {
            reversed.set(x, y, -truth.u(x, y), -truth.v(x, y));
        }
    }
    let reversed_path = dir.path().join("reversed.flo");
    write_flo(&reversed, &reversed_path).unwrap();

    let seq = dir.path().join("seq.tsv");
    let normal = dir.path().join("flow/pair_000.flo");
    let mut lines = Vec::new();
    for i in 0..6 {
        let flo = if i == 4 { &reversed_path } else { &normal };
        lines.push(format!("{}\t{}", frame.display(), flo.display()));
    }
    fs::write(&seq, lines.join("\n")).unwrap();

    let out = run_ok(&[
        "detect-unexpected",
        "--model",
        model_path.to_str().unwrap(),
        "--manifest",
        seq.to_str().unwrap(),
        "--stride",
        "2",
        "--json",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["flagged"], serde_json::json!([4]));
    assert_eq!(report["baseline"][0], serde_json::Value::Null);
    assert_eq!(report["epe"].as_array().unwrap().len(), 6);

    // Identical flow everywhere: zero spread, strictly-over never fires.
    let calm_lines: Vec<String> = vec![format!("{}\t{}", frame.display(), normal.display()); 4];
    fs::write(&seq, calm_lines.join("\n")).unwrap();
    let out = run_ok(&[
        "detect-unexpected",
        "--model",
        model_path.to_str().unwrap(),
        "--manifest",
        seq.to_str().unwrap(),
        "--stride",
        "2",
        "--json",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["flagged"].as_array().unwrap().len(), 0);

    // Fewer than two frames is an error.
    fs::write(&seq, &calm_lines[0]).unwrap();
    assert_eq!(
        exit_code(&[
            "detect-unexpected",
            "--model",
            model_path.to_str().unwrap(),
            "--manifest",
            seq.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn pool_partitions_the_grid_and_renders_a_map() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = unlabeled_copy(&synth_corpus(dir.path(), 9, 4));
    let model_path = dir.path().join("model.srf");
    train_joint(&manifest, &model_path, 4);

    let image = dir.path().join("frames/pair_002_a.png");
    let json_path = dir.path().join("pools.json");
    let viz_path = dir.path().join("pools.png");
    run_ok(&[
        "pool",
        "--model",
        model_path.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--grid-stride",
        "6",
        "--out",
        json_path.to_str().unwrap(),
        "--viz",
        viz_path.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(report["n_pools"], serde_json::json!(9));
    let hist: Vec<u64> = report["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(hist.len(), 9);
    assert_eq!(
        hist.iter().sum::<u64>(),
        report["locations"].as_u64().unwrap(),
        "every grid location belongs to exactly one pool"
    );
    assert_eq!(report["pools"].as_array().unwrap().len(), 9);
    assert_eq!(report["pools"][0]["hog"].as_array().unwrap().len(), 108);
    let map = load_image(&viz_path).unwrap();
    assert_eq!((map.width(), map.height()), (64, 64));
}

#[test]
fn warp_with_zero_flow_reproduces_the_image() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 10, 2);
    let image_path = dir.path().join("frames/pair_000_a.png");
    let zeros = dir.path().join("zeros.flo");
    write_flo(&FlowField::zeros(64, 64), &zeros).unwrap();
    let out = dir.path().join("same.png");
    run_ok(&[
        "warp",
        "--image",
        image_path.to_str().unwrap(),
        "--flow",
        zeros.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let a = load_image(&image_path).unwrap();
    let b = load_image(&out).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn flow2png_renders_the_field() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 11, 2);
    let out = dir.path().join("wheel.png");
    run_ok(&[
        "flow2png",
        "--flow",
        dir.path().join("flow/pair_000.flo").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let img = load_image(&out).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (64, 64, 3));
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    assert_eq!(exit_code(&[]), 1, "no subcommand is a usage error");
    assert_eq!(exit_code(&["--help"]), 0);
    assert_eq!(exit_code(&["--version"]), 0);
    assert_eq!(exit_code(&["train", "--manifest"]), 1, "missing value");
    assert_eq!(
        exit_code(&["flow2png", "--flow", "/no/such.flo", "--out", "/tmp/x.png"]),
        2,
        "missing input file is a data error"
    );
    assert_eq!(
        exit_code(&["eval", "--pred", "/no/such.flo"]),
        1,
        "missing --truth/--image is caught before touching the disk"
    );
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        exit_code(&[
            "synth",
            "--out",
            dir.path().to_str().unwrap(),
            "--class",
            "blob=1,0"
        ]),
        1,
        "unknown texture name is a usage error"
    );
}
