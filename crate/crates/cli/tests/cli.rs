use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::Digest as _;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybridimp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hybridimp")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic data plus a 30% MCAR mask in `dir`.
fn prepared(dir: &Path, n: usize) -> (PathBuf, PathBuf, PathBuf) {
    let n = n.to_string();
    ok(&["synth", "--n", &n, "--seed", "1", "--out", p(dir)]);
    let data = dir.join("data.csv");
    let schema = dir.join("schema.json");
    ok(&[
        "mask", "--data", p(&data), "--schema", p(&schema), "--rate", "0.3", "--seed", "2", "--out", p(dir),
    ]);
    (data, schema, dir.join("mask.csv"))
}

fn tiny_train(dir: &Path, data: &Path, schema: &Path, mask: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--data", p(data), "--schema", p(schema), "--mask", p(mask), "--epochs", "2",
        "--hidden", "16", "--depth", "1", "--time-dim", "8", "--lr", "1e-3", "--out", p(dir),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn synth_defaults_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", p(dir.path())]);
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 30);
    assert_eq!(lines.count(), 10_000);

    ok(&["synth", "--n", "100", "--out", p(dir.path())]);
    assert_eq!(data_rows(&dir.path().join("data.csv")).len(), 100);
}

#[test]
fn synth_is_reproducible_and_manifest_hashes_match() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["synth", "--n", "50", "--seed", "9", "--out", p(d.path())]);
    }
    for f in ["data.csv", "schema.json", "coefficients.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("synth.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["n"], 50);
    let recorded = manifest["artifacts"]["data.csv"]["sha256"].as_str().unwrap();
    let bytes = fs::read(a.path().join("data.csv")).unwrap();
    let digest: String = sha2::Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(recorded, digest);
    let leftovers = fs::read_dir(a.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains(".tmp"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn mask_hits_rate_and_rejects_misuse() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n", "1000", "--out", p(dir.path())]);
    let data = dir.path().join("data.csv");
    let schema = dir.path().join("schema.json");
    let out = ok(&[
        "mask", "--data", p(&data), "--schema", p(&schema), "--mechanism", "mcar", "--rate", "0.5", "--out",
        p(dir.path()),
    ]);
    let line = String::from_utf8(out.stdout).unwrap();
    let rate: f64 = line.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((rate - 0.5).abs() <= 0.02, "{rate}");
    let mask = fs::read_to_string(dir.path().join("mask.csv")).unwrap();
    assert_eq!(mask.lines().count(), 1001);

    let bad_rate = run(&["mask", "--data", p(&data), "--schema", p(&schema), "--rate", "1.5", "--out", p(dir.path())]);
    assert_eq!(bad_rate.status.code(), Some(2));
    let no_driver = run(&[
        "mask", "--data", p(&data), "--schema", p(&schema), "--mechanism", "mar", "--out", p(dir.path()),
    ]);
    assert_eq!(no_driver.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_driver.stderr).contains("--driver"));

    for driver in ["auto", "num_1:num_2", "num_1:num_2:p70"] {
        ok(&[
            "mask", "--data", p(&data), "--schema", p(&schema), "--mechanism", "mar", "--driver", driver, "--out",
            p(dir.path()),
        ]);
    }
    ok(&[
        "mask", "--data", p(&data), "--schema", p(&schema), "--mechanism", "mnar", "--mnar-category", "cat_1:1",
        "--out", p(dir.path()),
    ]);
    let self_driven = run(&[
        "mask", "--data", p(&data), "--schema", p(&schema), "--mechanism", "mar", "--driver", "num_1:num_1", "--out",
        p(dir.path()),
    ]);
    assert_eq!(self_driven.status.code(), Some(2));
}

#[test]
fn train_impute_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, schema, mask) = prepared(d, 200);
    let out = tiny_train(d, &data, &schema, &mask, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().filter(|l| l.starts_with("epoch")).count(), 2);
    assert_eq!(data_rows(&d.join("train_log.csv")).len(), 2);
    assert!(d.join("loss.svg").exists());
    let ckpt = d.join("model.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    hybridimp_core::Checkpoint::from_bytes(&bytes).unwrap();

    let imputed = d.join("imputed.csv");
    let mut runs = Vec::new();
    for _ in 0..2 {
        ok(&[
            "impute", "--checkpoint", p(&ckpt), "--data", p(&data), "--mask", p(&mask), "--steps", "20", "--eta",
            "0", "--out", p(d),
        ]);
        runs.push(fs::read(&imputed).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert!(!String::from_utf8_lossy(&runs[0]).contains(",,"));

    let too_long = run(&[
        "impute", "--checkpoint", p(&ckpt), "--data", p(&data), "--mask", p(&mask), "--steps", "200", "--out", p(d),
    ]);
    assert_eq!(too_long.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&too_long.stderr).contains("T = 100"));

    let same = ok(&[
        "eval", "--truth", p(&data), "--imputed", p(&data), "--mask", p(&mask), "--schema", p(&schema), "--out",
        p(d),
    ]);
    assert_eq!(String::from_utf8(same.stdout).unwrap().trim(), "AvgErr 0.000000");

    let labels = d.join("labels.csv");
    let column: Vec<String> = data_rows(&data).iter().map(|r| r.split(',').nth(15).unwrap().to_string()).collect();
    fs::write(&labels, format!("y\n{}\n", column.join("\n"))).unwrap();
    ok(&[
        "eval", "--truth", p(&data), "--imputed", p(&imputed), "--mask", p(&mask), "--schema", p(&schema),
        "--labels", p(&labels), "--task", "classify", "--out", p(d),
    ]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["downstream"]["score"].as_f64().unwrap() > 0.0);
    assert!(metrics["avg_err"].as_f64().unwrap() > 0.0);
    assert_eq!(data_rows(&d.join("metrics.csv")).len(), 1);
}

#[test]
fn zero_self_mask_ratio_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema, mask) = prepared(dir.path(), 60);
    let out = tiny_train(dir.path(), &data, &schema, &mask, &["--self-mask-ratio", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("e.g. 0.3"));
    assert!(!dir.path().join("model.ckpt").exists());
}

#[test]
fn config_file_supplies_flags_and_explicit_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, schema, mask) = prepared(d, 80);
    let cfg = d.join("cfg.toml");
    fs::write(&cfg, "seed = 4\n\n[train]\nepochs = 3\nhidden = 8\ndepth = 1\ntime-dim = 4\n").unwrap();
    let out = d.join("a");
    ok(&[
        "--config", p(&cfg), "train", "--data", p(&data), "--schema", p(&schema), "--mask", p(&mask), "--epochs",
        "2", "--out", p(&out),
    ]);
    assert_eq!(data_rows(&out.join("train_log.csv")).len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["hidden"], 8);
    assert_eq!(manifest["config"]["epochs"], 2);

    // the resolved flags alone reproduce the run
    let again = d.join("b");
    ok(&["--config", p(&out.join("train.toml")), "train", "--out", p(&again)]);
    assert_eq!(fs::read(out.join("model.ckpt")).unwrap(), fs::read(again.join("model.ckpt")).unwrap());

    fs::write(&cfg, "[train]\nno-such-flag = 1\n").unwrap();
    let bad = run(&["--config", p(&cfg), "train", "--data", p(&data), "--schema", p(&schema)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let missing = run(&["synth", "--n", "0", "--out", "/nonexistent-dir-for-test"]);
    assert_eq!(missing.status.code(), Some(2));
}

fn ablate(dir: &Path, study: &str, extra: &[&str]) -> Vec<String> {
    let mut args = vec![
        "ablate", "--study", study, "--n", "120", "--epochs", "1", "--hidden", "8", "--depth", "1", "--time-dim",
        "4", "--lr", "1e-3", "--out", p(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    assert!(dir.join(format!("ablation-{study}.svg")).exists());
    data_rows(&dir.join(format!("ablation-{study}.csv")))
}

#[test]
fn ablation_grids_have_the_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let rows = ablate(dir.path(), "eta-steps", &["--repeats", "1"]);
    assert_eq!(rows.len(), 6);

    let rows = ablate(dir.path(), "two-channel", &["--mechanisms", "mcar,mar,mnar"]);
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().any(|r| r.contains("Continuous-only")));

    let rows = ablate(dir.path(), "self-mask", &[]);
    assert_eq!(rows.len(), 11);
    assert!(rows[0].contains("Zero-Imp") && rows[1].contains("Mean-Imp"));

    let short = run(&["ablate", "--study", "eta-steps", "--steps", "50", "--out", p(dir.path())]);
    assert_eq!(short.status.code(), Some(2));
}

#[test]
fn trained_model_beats_mean_mode_on_synthetic() {
    use hybridimp_core::eval::{evaluate, mean_mode_baseline};
    use hybridimp_core::{FeatureSchema, MaskedTable};
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, schema, mask) = prepared(d, 2000);
    ok(&[
        "train", "--data", p(&data), "--schema", p(&schema), "--mask", p(&mask), "--epochs", "30", "--patience",
        "30", "--hidden", "128", "--depth", "1", "--time-dim", "32", "--lr", "1e-3", "--batch-size", "16", "--seed",
        "3", "--out", p(d),
    ]);
    ok(&[
        "impute", "--checkpoint", p(&d.join("model.ckpt")), "--data", p(&data), "--mask", p(&mask), "--out", p(d),
    ]);
    let schema = FeatureSchema::load(&schema).unwrap();
    let truth = MaskedTable::load_csv(&data, &schema).unwrap();
    let imputed = MaskedTable::load_csv(d.join("imputed.csv"), &schema).unwrap();
    let m = hybridimp_core::table::read_mask_csv(fs::File::open(&mask).unwrap(), &schema).unwrap();
    let model = evaluate(&truth, &imputed, &m).unwrap().avg_err;
    let baseline = evaluate(&truth, &mean_mode_baseline(&truth.with_mask(&m).unwrap()).unwrap(), &m)
        .unwrap()
        .avg_err;
    assert!(model < baseline, "model {model} vs mean/mode {baseline}");
}
