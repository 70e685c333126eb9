use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY_SPEC: &str = "image_size = [16, 16]\nsamples = { train = 300, val = 100, test = 100 }\n";
const FAST: [&str; 6] = ["--baseline-epochs", "1", "--stage1-epochs", "1", "--stage2-epochs", "1"];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npad-lab"))
        .args(args)
        .output()
        .expect("binary runs")
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

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A temp dir holding a generated tiny dataset under `data/`.
fn tiny_data() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, TINY_SPEC).unwrap();
    let data = dir.path().join("data");
    ok(&["generate", "--spec", p(&spec), "--out", p(&data), "--seed", "3"]);
    (dir, data)
}

fn train(data: &Path, out: &Path, variant: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--variant", variant, "--data", p(data), "--out", p(out)];
    args.extend(FAST);
    args.extend(extra);
    run(&args)
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let (dir, data) = tiny_data();
    let again = dir.path().join("again");
    ok(&["generate", "--spec", p(&dir.path().join("spec.toml")), "--out", p(&again), "--seed", "3"]);
    for f in ["manifest.json", "train.csv", "val.csv", "test.csv"] {
        assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let other = dir.path().join("other");
    ok(&["generate", "--spec", p(&dir.path().join("spec.toml")), "--out", p(&other), "--seed", "4"]);
    assert_ne!(fs::read(data.join("manifest.json")).unwrap(), fs::read(other.join("manifest.json")).unwrap());
}

#[test]
fn generate_rejects_infeasible_correlation() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, format!("{TINY_SPEC}target_protected_correlation = 1.2\n")).unwrap();
    let out = run(&["generate", "--spec", p(&spec), "--out", p(&dir.path().join("d"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("target_protected_correlation"), "{}", stderr(&out));
}

#[test]
fn generate_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, format!("{TINY_SPEC}colour_noise = 1\n")).unwrap();
    let out = run(&["generate", "--spec", p(&spec), "--out", p(&dir.path().join("d"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("colour_noise"));
}

#[test]
fn generate_exports_one_ppm_per_sample() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "image_size = [16, 16]\nsamples = { train = 20, val = 6, test = 8 }\n").unwrap();
    let data = dir.path().join("d");
    ok(&["generate", "--spec", p(&spec), "--out", p(&data), "--export-ppm"]);
    let ppms: Vec<_> = fs::read_dir(data.join("ppm")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(ppms.len(), 34);
    let bytes = fs::read(&ppms[0]).unwrap();
    assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(bytes.len(), "P6\n16 16\n255\n".len() + 16 * 16 * 3);
}

#[test]
fn bangs_confusions_reproduce_reported_metrics() {
    let dir = TempDir::new().unwrap();
    let out = ok(&[
        "evaluate",
        "--from-confusions",
        p(&fixture("bangs_confusions.csv")),
        "--protected",
        "gender",
        "--out",
        p(dir.path()),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("OPE 10.73"), "{stdout}");
    assert!(stdout.contains("OPE 0.08"), "{stdout}");
    let report = json(&dir.path().join("report.json"));
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    let metric = |i: usize, m: &str| reports[i]["report"]["protected"][0][m].clone();
    assert_eq!(reports[0]["algorithm"], "BMT");
    assert!((metric(0, "ope").as_f64().unwrap() - 0.1073).abs() < 1e-4);
    assert_eq!(metric(0, "ppv_parity"), "undefined");
    assert!((metric(1, "ope").as_f64().unwrap() - 0.0008).abs() < 1e-4);
    assert!((metric(1, "deo").as_f64().unwrap() - 0.1290).abs() < 1e-4);
    assert!((metric(1, "ppv_parity").as_f64().unwrap() - 0.1409).abs() < 1e-4);
    assert!(dir.path().join("charts/dob.svg").exists());
    assert!(dir.path().join("charts/ope.svg").exists());
}

#[test]
fn perfect_predictor_has_zero_fairness_metrics() {
    let dir = TempDir::new().unwrap();
    ok(&["evaluate", "--from-confusions", p(&fixture("perfect.csv")), "--out", p(dir.path())]);
    let report = json(&dir.path().join("report.json"));
    let section = &report["reports"][0]["report"]["protected"][0];
    for m in ["dob", "ope", "deo", "ppv_parity"] {
        assert_eq!(section[m].as_f64(), Some(0.0), "{m}");
    }
    assert_eq!(report["reports"][0]["report"]["overall_accuracy"].as_f64(), Some(1.0));
}

#[test]
fn select_picks_head_of_sorted_disparities_deterministically() {
    let (dir, data) = tiny_data();
    let a = dir.path().join("sel_a");
    let b = dir.path().join("sel_b");
    for out in [&a, &b] {
        ok(&["select", "--data", p(&data), "--target", "shape", "--n", "1", "--baseline-epochs", "1", "--out", p(out)]);
    }
    let sel = json(&a.join("selection.json"));
    assert_eq!(sel["selected"].as_array().unwrap().len(), 1);
    assert_eq!(sel["selected"][0], sel["disparities"]["sorted"][0]);
    assert_eq!(sel["independence_gate"], true);
    assert_eq!(fs::read(a.join("selection.json")).unwrap(), fs::read(b.join("selection.json")).unwrap());
    assert!(json(&a.join("provenance.json"))["config_hash"].is_string());
}

#[test]
fn select_without_independence_is_flagged() {
    let (dir, data) = tiny_data();
    let out = dir.path().join("sel");
    ok(&[
        "select", "--data", p(&data), "--n", "2", "--no-independence", "--baseline-epochs", "1", "--out", p(&out),
    ]);
    let sel = json(&out.join("selection.json"));
    assert_eq!(sel["independence_gate"], false);
    assert_eq!(sel["selected"][0], sel["disparities"]["sorted"][0]);
    assert_eq!(sel["selected"][1], sel["disparities"]["sorted"][1]);
}

#[test]
fn select_rejects_unknown_target() {
    let (dir, data) = tiny_data();
    let out = run(&["select", "--data", p(&data), "--target", "hat", "--out", p(&dir.path().join("s"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("hat"));
}

#[test]
fn train_variants_write_distinct_artifacts() {
    let (dir, data) = tiny_data();
    let bmt = dir.path().join("bmt");
    let npad = dir.path().join("npad1");
    ok(&train_args(&data, &bmt, "bmt"));
    let ckpt = bmt.join("model.ckpt");
    ok(&[train_args(&data, &npad, "npad1"), vec!["--baseline", p(&ckpt)]].concat());
    for d in [&bmt, &npad] {
        for f in ["model.ckpt", "log.jsonl", "provenance.json", "report.json", "config.toml"] {
            assert!(d.join(f).exists(), "{} missing", d.join(f).display());
        }
    }
    assert!(npad.join("selection.json").exists());
    let (pa, pb) = (json(&bmt.join("provenance.json")), json(&npad.join("provenance.json")));
    assert_ne!(pa["config_hash"], pb["config_hash"]);
    assert_ne!(fs::read(&ckpt).unwrap(), fs::read(npad.join("model.ckpt")).unwrap());
    assert_eq!(pb["config"]["variant"], "npad1");
}

fn train_args<'a>(data: &'a Path, out: &'a Path, variant: &'a str) -> Vec<&'a str> {
    let mut args = vec!["train", "--variant", variant, "--data", p(data), "--out", p(out)];
    args.extend(FAST);
    args
}

#[test]
fn train_is_idempotent() {
    let (dir, data) = tiny_data();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, out, "npad1", &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["model.ckpt", "log.jsonl", "report.json", "selection.json", "provenance.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn pad_needs_a_protected_label() {
    let (dir, data) = tiny_data();
    let out = train(&data, &dir.path().join("pad"), "pad", &["--protected", "stripes"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stripes"));
}

#[test]
fn npad2_logs_at_most_eight_composite_classes() {
    let (dir, data) = tiny_data();
    let out = dir.path().join("npad2");
    let o = train(&data, &out, "npad2", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("log.jsonl")).unwrap();
    let active: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter_map(|r| r["active_classes"].as_u64())
        .collect();
    assert!(!active.is_empty());
    assert!(active.iter().all(|&a| (2..=8).contains(&a)), "{active:?}");
    let grouping = &json(&out.join("provenance.json"))["grouping"];
    assert_eq!(grouping["attributes"].as_array().unwrap().len(), 2);
}

#[test]
fn divergence_exits_with_runtime_code() {
    let (dir, data) = tiny_data();
    let cfg = dir.path().join("diverge.toml");
    fs::write(&cfg, "[loss]\nlambda1 = 1e308\nlambda2 = 1e308\n").unwrap();
    let out = train(&data, &dir.path().join("div"), "npad1", &["--config", p(&cfg)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch"));
}

#[test]
fn config_file_rejects_unknown_keys_and_flags_override() {
    let (dir, data) = tiny_data();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "learning_rate = 0.1\n").unwrap();
    let out = train(&data, &dir.path().join("x"), "bmt", &["--config", p(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"));

    let good = dir.path().join("good.toml");
    fs::write(&good, "seed = 11\nalpha = 0.01\n").unwrap();
    let out_dir = dir.path().join("y");
    let o = train(&data, &out_dir, "bmt", &["--config", p(&good), "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = &json(&out_dir.join("provenance.json"))["config"];
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["alpha"], 0.01);
    assert_eq!(cfg["model"]["input"], serde_json::json!([3, 16, 16]));
}

#[test]
fn evaluate_two_attributes_adds_intersection_and_round_trips() {
    let (dir, data) = tiny_data();
    let run_dir = dir.path().join("bmt");
    ok(&train_args(&data, &run_dir, "bmt"));
    let eval = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        p(&run_dir.join("model.ckpt")),
        "--data",
        p(&data),
        "--protected",
        "color,stripes",
        "--out",
        p(&eval),
    ]);
    let text = fs::read_to_string(eval.join("report.json")).unwrap();
    let report: npad_core::metrics::MetricsReport = serde_json::from_str(&text).unwrap();
    let inter = report.intersectional.as_ref().expect("intersectional section");
    assert_eq!(inter.attributes, ["color", "stripes"]);
    assert_eq!(report.recompute().unwrap(), report);

    // overall accuracy is the sample-weighted mean of subgroup accuracies
    for section in &report.protected {
        let weighted: f64 = section
            .confusions
            .iter()
            .zip(&section.subgroup_accuracy)
            .map(|(c, a)| a.value().unwrap_or(0.0) * c.total as f64)
            .sum::<f64>()
            / report.samples as f64;
        assert!((weighted - report.overall_accuracy).abs() < 1e-12);
    }
    assert!(eval.join("charts/dob.svg").exists());
}

#[test]
fn evaluate_rejects_missing_protected_column() {
    let (dir, data) = tiny_data();
    let run_dir = dir.path().join("bmt");
    ok(&train_args(&data, &run_dir, "bmt"));
    let out = run(&[
        "evaluate",
        "--model",
        p(&run_dir.join("model.ckpt")),
        "--data",
        p(&data),
        "--protected",
        "age",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("age"));
}

#[test]
fn compare_tabulates_runs_and_checks_arity_and_targets() {
    let (dir, data) = tiny_data();
    let bmt = dir.path().join("bmt");
    let npad = dir.path().join("npad1");
    ok(&train_args(&data, &bmt, "bmt"));
    ok(&[train_args(&data, &npad, "npad1"), vec!["--baseline", p(&bmt.join("model.ckpt"))]].concat());

    let cmp = dir.path().join("cmp");
    ok(&["compare", "--runs", p(&bmt), p(&npad), "--out", p(&cmp)]);
    let csv = fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "run,variant,accuracy,dob,ope,best");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",bmt,") && lines[2].contains(",npad1,"));
    for col in ["accuracy", "dob", "ope"] {
        assert!(lines[1..].iter().any(|l| l.rsplit(',').next().unwrap().contains(col)), "{col}");
    }
    assert!(cmp.join("charts/comparison_dob.svg").exists());

    let single = run(&["compare", "--runs", p(&bmt), "--out", p(&cmp)]);
    assert_eq!(code(&single), 2);

    let other = dir.path().join("other");
    ok(&[train_args(&data, &other, "bmt"), vec!["--target", "marker"]].concat());
    let mixed = run(&["compare", "--runs", p(&bmt), p(&other), "--out", p(&cmp)]);
    assert_eq!(code(&mixed), 2);
    assert!(stderr(&mixed).contains("different targets"));
}

#[test]
fn threads_variable_must_be_positive() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_npad-lab"))
        .args(["compare", "--runs", "a", "b", "--out", p(dir.path())])
        .env("NPAD_LAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("NPAD_LAB_THREADS"));
}
