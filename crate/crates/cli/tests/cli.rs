use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgsgan::data::{load_dataset, DataFormat};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mgsgan"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    run(args, cwd).status.code().expect("exit code")
}

const SMALL: &[&str] = &[
    "--batch", "8", "--noise-dim", "6", "--set", "gen-channels=4,3,2", "--set", "disc-channels=2,3",
    "--set", "cls-channels=2,3", "--set", "cls-kernels=3,5",
];

fn synth_small(dir: &Path) -> PathBuf {
    ok(&["synth", "--classes", "3", "--bands", "12", "--sizes", "40,40,8", "--seed", "5", "--out", "d.csv"], dir);
    dir.join("d.csv")
}

fn train_small(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["train", "--data", "d.csv", "--out", out];
    if !extra.contains(&"--tttr") {
        args.extend_from_slice(&["--tttr", "0.25"]);
    }
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args, dir);
}

#[test]
fn synth_is_reproducible_and_imbalanced() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = ["synth", "--classes", "4", "--bands", "64", "--sizes", "500,500,500,10", "--seed", "7"];
    ok(&[&args[..], &["--out", "a.bin"]].concat(), dir);
    ok(&[&args[..], &["--out", "b.bin"]].concat(), dir);
    assert_eq!(fs::read(dir.join("a.bin")).unwrap(), fs::read(dir.join("b.bin")).unwrap());
    let ds = load_dataset(&dir.join("a.bin"), DataFormat::Bin).unwrap();
    assert_eq!(ds.class_counts(), vec![500, 500, 500, 10]);
    assert_eq!(ds.bands(), 64);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&["synth", "--classes", "4", "--bands", "8", "--sizes", "5,5,5", "--out", "x.csv"], dir), 1);
    assert_eq!(code(&["train", "--bogus"], dir), 1);
    assert_eq!(code(&[], dir), 1);
    assert_eq!(code(&["--help"], dir), 0);
    synth_small(dir);
    assert_eq!(code(&["train", "--data", "d.csv", "--out", "r", "--mode", "gan"], dir), 1);
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.csv"), "d=2,N=2\n0.1,0.2,0\n0.3,1\n").unwrap();
    assert_eq!(code(&["convert", "--input", "bad.csv", "--output", "bad.bin"], dir), 2);
    assert_eq!(code(&["convert", "--input", "missing.csv", "--output", "x.bin"], dir), 2);
}

#[test]
fn convert_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    ok(&["convert", "--input", "d.csv", "--output", "d.bin"], dir);
    ok(&["convert", "--input", "d.bin", "--output", "e.csv"], dir);
    assert_eq!(fs::read(dir.join("d.csv")).unwrap(), fs::read(dir.join("e.csv")).unwrap());
}

#[test]
fn init_only_training_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    train_small(dir, "run", &["--mode", "mgsgan", "--epochs", "0"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run/manifest.json")).unwrap()).unwrap();
    let runs = manifest["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    for key in ["checkpoint", "runlog", "train_data", "test_data", "config"] {
        assert!(dir.join("run").join(runs[0][key].as_str().unwrap()).exists(), "{key}");
    }
    assert_eq!(fs::read_to_string(dir.join("run/seed-0/runlog.jsonl")).unwrap(), "");
    let expected_hash = {
        use sha2::Digest;
        sha2::Sha256::digest(fs::read(dir.join("d.csv")).unwrap())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    };
    assert_eq!(manifest["dataset_sha256"], expected_hash);
}

#[test]
fn seeds_fan_out_under_one_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    train_small(dir, "run", &["--epochs", "2", "--seeds", "1,2"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
    let a = fs::read_to_string(dir.join("run/seed-1/runlog.jsonl")).unwrap();
    let b = fs::read_to_string(dir.join("run/seed-2/runlog.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 2);
    assert_ne!(a, b);
}

fn without_seconds(log: &str) -> Vec<serde_json::Value> {
    log.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["seconds"] = serde_json::json!(0.0);
            v
        })
        .collect()
}

#[test]
fn flags_override_config_and_snapshot_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    fs::write(dir.join("cfg.txt"), "epochs=5\nmode=acsgan\nseed=3\n").unwrap();
    train_small(dir, "run", &["--config", "cfg.txt", "--epochs", "2"]);
    let log = fs::read_to_string(dir.join("run/seed-3/runlog.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let snapshot = fs::read_to_string(dir.join("run/seed-3/config.txt")).unwrap();
    assert!(snapshot.contains("mode=acsgan\n") && snapshot.contains("epochs=2\n"));

    ok(&["train", "--data", "d.csv", "--out", "again", "--config", "run/seed-3/config.txt"], dir);
    for f in ["model.ckpt", "train.bin", "test.bin", "config.txt"] {
        assert_eq!(
            fs::read(dir.join("run/seed-3").join(f)).unwrap(),
            fs::read(dir.join("again/seed-3").join(f)).unwrap(),
            "{f}"
        );
    }
    let again = fs::read_to_string(dir.join("again/seed-3/runlog.jsonl")).unwrap();
    assert_eq!(without_seconds(&log), without_seconds(&again));
}

#[test]
fn numeric_failure_exits_three_and_keeps_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    let mut args = vec!["train", "--data", "d.csv", "--out", "run", "--epochs", "4", "--lr", "1e300"];
    args.extend_from_slice(SMALL);
    let out = run(&args, dir);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("runlog.jsonl"), "{stderr}");
    assert!(dir.join("run/seed-0/runlog.jsonl").exists());
    assert!(dir.join("run/seed-0/model.last-good.ckpt").exists());
}

#[test]
fn comparing_a_run_with_itself_gives_zero_statistic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    train_small(dir, "run", &["--epochs", "1"]);
    ok(&["eval", "--run", "run", "--compare", "run", "--json", "r.json"], dir);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["comparisons"][0]["result"]["statistic"], 0.0);
    assert_eq!(report["comparisons"][0]["result"]["significant"], false);
    let ckpt = "run/seed-0/model.ckpt";
    let stdout = ok(&["eval", "--checkpoint", ckpt, "--data", "run/seed-0/test.bin", "--compare", ckpt], dir);
    assert!(stdout.contains("M_t = 0.0000"), "{stdout}");
}

#[test]
fn mismatched_checkpoint_and_data_is_a_compatibility_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    train_small(dir, "run", &["--epochs", "0"]);
    ok(&["synth", "--classes", "3", "--bands", "10", "--sizes", "5,5,5", "--out", "other.csv"], dir);
    let out = run(&["eval", "--checkpoint", "run/seed-0/model.ckpt", "--data", "other.csv"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("compatib"));
}

#[test]
fn well_separated_fit_reaches_full_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--classes", "3", "--bands", "12", "--sizes", "30,30,30", "--overlap", "0", "--seed", "2", "--out", "d.csv"], dir);
    let mut args = vec!["train", "--data", "d.csv", "--out", "run", "--tttr", "0.5", "--epochs", "60", "--lr", "0.005"];
    args.extend_from_slice(SMALL);
    ok(&args, dir);
    ok(&["eval", "--run", "run", "--json", "r.json"], dir);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["methods"][0]["overall_accuracy"]["mean"], 1.0);
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/eval_table.txt")
}

#[test]
fn report_table_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    train_small(dir, "a", &["--epochs", "0", "--seeds", "1,2"]);
    train_small(dir, "b", &["--epochs", "0", "--seeds", "1,2", "--mode", "achsgan"]);
    let table = ok(&["eval", "--run", "a", "--compare", "b"], dir);
    if std::env::var_os("MGSGAN_BLESS").is_some() {
        fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        fs::write(golden_path(), &table).unwrap();
    }
    let golden = fs::read_to_string(golden_path()).expect("golden file (regenerate with MGSGAN_BLESS=1)");
    assert_eq!(table, golden);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Class") && lines[0].contains("mgsgan") && lines[0].contains("achsgan"));
    let labels: Vec<&str> = lines.iter().map(|l| l.split_whitespace().next().unwrap_or("")).collect();
    assert_eq!(&labels[2..5], &["0", "1", "2"]);
    assert_eq!(&labels[6..9], &["OA", "Kappa", "AA"]);
    assert!(lines[9].starts_with("McNemar"));
}

fn read_export(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn exported_means_respect_domains() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small(dir);
    train_small(dir, "run", &["--epochs", "2"]);
    let stdout = ok(
        &["export-spectra", "--checkpoint", "run/seed-0/model.ckpt", "--data", "run/seed-0/train.bin", "--samples", "16", "--out", "s.csv"],
        dir,
    );
    assert_eq!(stdout, "class,containment\n0,1\n1,1\n2,1\n");
    let rows = read_export(&dir.join("s.csv"));
    assert_eq!(rows.len(), 3 * 12);
    for r in rows {
        assert!(r[4] <= r[3] && r[3] <= r[5], "{r:?}");
    }
    assert_eq!(
        code(&["export-spectra", "--checkpoint", "run/seed-0/model.ckpt", "--data", "run/seed-0/train.bin", "--class", "3", "--out", "s.csv"], dir),
        1
    );
}

#[test]
fn degenerate_domain_exports_the_single_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // 4 samples of class 2 at tttr 0.1 leave a single training sample.
    ok(&["synth", "--classes", "3", "--bands", "12", "--sizes", "40,40,4", "--seed", "5", "--out", "d.csv"], dir);
    train_small(dir, "run", &["--epochs", "1", "--margin", "0", "--tttr", "0.1"]);
    let train = load_dataset(&dir.join("run/seed-0/train.bin"), DataFormat::Bin).unwrap();
    assert_eq!(train.class_counts()[2], 1);
    ok(
        &["export-spectra", "--checkpoint", "run/seed-0/model.ckpt", "--data", "run/seed-0/train.bin", "--class", "2", "--samples", "8", "--out", "s.csv"],
        dir,
    );
    for r in read_export(&dir.join("s.csv")) {
        let scale = r[2].abs().max(1.0);
        assert!((r[3] - r[2]).abs() < 1e-5 * scale, "{r:?}");
    }
}

#[test]
fn minority_export_separates_constrained_and_unconstrained_generators() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--classes", "4", "--bands", "64", "--sizes", "500,500,500,10", "--seed", "7", "--overlap", "0.85", "--out", "d.bin"], dir);
    let containment = |mode: &str| -> f64 {
        let out = format!("run-{mode}");
        let mut args = vec!["train", "--data", "d.bin", "--out", &out, "--tttr", "0.2", "--epochs", "1", "--mode", mode];
        args.extend_from_slice(SMALL);
        ok(&args, dir);
        let ckpt = format!("{out}/seed-0/model.ckpt");
        let data = format!("{out}/seed-0/train.bin");
        let stdout = ok(&["export-spectra", "--checkpoint", &ckpt, "--data", &data, "--class", "3", "--samples", "64", "--out", "s.csv"], dir);
        stdout.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!(containment("mgsgan"), 1.0);
    assert!(containment("acsgan") < 1.0);
}
