mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{seizure_contract_builtin, read_tree, Fixture, N_FEATURES};
use mlguard::harness::{synth_dataset, Distribution, ReplayReport};
use mlguard::{GuardedOutput, Value};

fn mlguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trained(seed: u64) -> Fixture {
    let fx = Fixture::seizure_contract(seed);
    let out = mlguard(&["train", s(&fx.contract()), "--out", s(&fx.path("bundle")), "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fx
}

fn write_input(fx: &Fixture, name: &str, rows: usize, seed: u64, shift: f64) -> std::path::PathBuf {
    let mut data = synth_dataset(rows, N_FEATURES, Distribution::StandardNormal, seed);
    for row in data.rows_mut() {
        for v in row.iter_mut() {
            *v = Value::Real(v.as_f64().unwrap() + shift);
        }
    }
    let path = fx.path(name);
    data.write_csv_path(&path).unwrap();
    path
}

#[test]
fn check_seizure_contract() {
    let fx = Fixture::seizure_contract(1);
    let out = mlguard(&["check", s(&fx.contract())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("OK"), "{stdout}");
    assert!(stdout.contains("3 conditions"), "{stdout}");
}

#[test]
fn check_reports_key_path_of_bad_threshold() {
    let fx = Fixture::new(
        &seizure_contract_builtin().replace("Confidence_threshold: 0.95", "Confidence_threshold: 1.5"),
        100,
        1,
    );
    let out = mlguard(&["check", s(&fx.contract())]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("Contract.Preconditions.Distribution_Matches.Trigger_conditions.Confidence_threshold"),
        "{stderr}"
    );
}

#[test]
fn check_reports_missing_resources() {
    let fx = Fixture::seizure_contract(1);
    std::fs::remove_file(fx.path("schema/eeg-10-20-system-256hz.json")).unwrap();
    let out = mlguard(&["check", s(&fx.contract())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Schema_Matches"));
}

#[test]
fn check_with_explicit_root() {
    let fx = Fixture::seizure_contract(1);
    let elsewhere = tempfile::tempdir().unwrap();
    let contract = elsewhere.path().join("c.yaml");
    std::fs::copy(fx.contract(), &contract).unwrap();
    assert_eq!(code(&mlguard(&["check", s(&contract)])), 1);
    assert_eq!(code(&mlguard(&["check", s(&contract), "--root", s(fx.root())])), 0);
}

#[test]
fn missing_contract_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlguard(&["check", s(&dir.path().join("nope.yaml"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn garbage_contract_is_rejected_not_crashed() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in ["", "::::", "Contract: [1, 2", "\u{0}\u{1}binary", "Contract:\n  Model: 5\n"]
        .iter()
        .enumerate()
    {
        let path = dir.path().join(format!("c{i}.yaml"));
        std::fs::write(&path, text).unwrap();
        let out = mlguard(&["check", s(&path)]);
        assert_eq!(code(&out), 1, "{text:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(code(&mlguard(&["--help"])), 0);
    for sub in ["check", "train", "run", "replay", "calibrate", "synth"] {
        let out = mlguard(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&mlguard(&[])), 2);
    assert_eq!(code(&mlguard(&["frobnicate"])), 2);
    assert_eq!(code(&mlguard(&["train", "c.yaml"])), 2);
    assert_eq!(code(&mlguard(&["train", "c.yaml", "--out", "b", "--seed", "x"])), 2);
}

#[test]
fn train_twice_is_byte_identical() {
    let fx = Fixture::seizure_contract(2);
    for dir in ["a", "b"] {
        let out = mlguard(&["train", s(&fx.contract()), "--out", s(&fx.path(dir)), "--seed", "7"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read_tree(&fx.path("a")), read_tree(&fx.path("b")));
}

#[test]
fn train_refuses_invalid_contract() {
    let fx = Fixture::seizure_contract(2);
    std::fs::remove_file(fx.path("data/eeg_train.csv")).unwrap();
    let out = mlguard(&["train", s(&fx.contract()), "--out", s(&fx.path("b")), "--seed", "7"]);
    assert_eq!(code(&out), 1);
    assert!(!fx.path("b").exists());
}

#[test]
fn run_writes_one_line_per_batch() {
    let fx = trained(3);
    let input = write_input(&fx, "input.csv", 250, 50, 0.0);
    let (output, log) = (fx.path("out.jsonl"), fx.path("log.jsonl"));
    let out = mlguard(&[
        "run",
        s(&fx.path("bundle")),
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--log",
        s(&log),
        "--batch-size",
        "100",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<GuardedOutput> = std::fs::read_to_string(&output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines.iter().map(|l| l.batch_id).collect::<Vec<_>>(), [0, 1, 2]);
    assert_eq!(lines[2].predictions.as_ref().unwrap().len(), 50);
    assert!(log.exists());
}

#[test]
fn run_whole_file_as_one_batch() {
    let fx = trained(4);
    let input = write_input(&fx, "drift.csv", 120, 51, 3.0);
    let (output, log) = (fx.path("out.jsonl"), fx.path("log.jsonl"));
    let out = mlguard(&[
        "run",
        s(&fx.path("bundle")),
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--log",
        s(&log),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&output).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 1);
}

#[test]
fn run_exits_one_on_rejection() {
    let fx = trained(5);
    let mut data = synth_dataset(50, N_FEATURES, Distribution::StandardNormal, 3);
    data.rows_mut()[0][0] = Value::Str("x".into());
    let input = fx.path("bad.csv");
    data.write_csv_path(&input).unwrap();
    let output = fx.path("out.jsonl");
    let out = mlguard(&[
        "run",
        s(&fx.path("bundle")),
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--log",
        s(&fx.path("log.jsonl")),
    ]);
    assert_eq!(code(&out), 1);
    let v: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&output).unwrap().trim()).unwrap();
    assert_eq!(v["status"], "rejected");
    assert!(v.get("predictions").is_none());
}

#[test]
fn run_refuses_corrupted_bundle() {
    let fx = trained(6);
    let contract = fx.path("bundle/contract.yaml");
    let text = std::fs::read_to_string(&contract).unwrap();
    std::fs::write(&contract, text.replace("0.95", "0.96")).unwrap();
    let input = write_input(&fx, "input.csv", 50, 1, 0.0);
    let out = mlguard(&[
        "run",
        s(&fx.path("bundle")),
        "--input",
        s(&input),
        "--output",
        s(&fx.path("o.jsonl")),
        "--log",
        s(&fx.path("l.jsonl")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("contract.yaml"));
}

fn replay(fx: &Fixture, input: &Path, shift: &str, seed: &str) -> (i32, Option<ReplayReport>) {
    let report = fx.path(&format!("report-{shift}-{seed}.json"));
    let out = mlguard(&[
        "replay",
        s(&fx.path("bundle")),
        "--input",
        s(input),
        "--shift",
        shift,
        "--onset",
        "10",
        "--batch-size",
        "100",
        "--report",
        s(&report),
        "--seed",
        seed,
    ]);
    let parsed = std::fs::read_to_string(&report)
        .ok()
        .map(|t| serde_json::from_str(&t).unwrap());
    (code(&out), parsed)
}

#[test]
fn replay_detects_mean_shift() {
    let fx = trained(7);
    let input = write_input(&fx, "stream.csv", 3000, 77, 0.0);
    let (c, report) = replay(&fx, &input, "mean:3.0:1.0", "1");
    assert_eq!(c, 0);
    let report = report.unwrap();
    assert_eq!(report.n_batches, 30);
    assert_eq!(report.shift_onset_batch, 10);
    assert!(report.detection_latency_batches.unwrap() <= 1);
    assert!(report.false_alarm_rate <= 0.3);
}

#[test]
fn replay_is_deterministic() {
    let fx = trained(8);
    let input = write_input(&fx, "stream.csv", 2000, 78, 0.0);
    let (_, a) = replay(&fx, &input, "scale:2.0:0.5", "4");
    let (_, b) = replay(&fx, &input, "scale:2.0:0.5", "4");
    let (mut a, mut b) = (a.unwrap(), b.unwrap());
    a.wall_time_ms = 0;
    b.wall_time_ms = 0;
    assert_eq!(a, b);
}

#[test]
fn replay_drop_column_rejects_every_shifted_batch() {
    let fx = trained(9);
    let input = write_input(&fx, "stream.csv", 2000, 79, 0.0);
    let (c, report) = replay(&fx, &input, "drop:f_01", "0");
    assert_eq!(c, 0);
    let report = report.unwrap();
    assert_eq!(report.rejected_batches, 10);
    assert_eq!(report.detection_latency_batches, Some(0));
}

#[test]
fn replay_bad_shift_is_usage_error() {
    let fx = trained(10);
    let input = write_input(&fx, "stream.csv", 500, 1, 0.0);
    assert_eq!(replay(&fx, &input, "tilt:3", "0").0, 2);
    assert_eq!(replay(&fx, &input, "mean:3:1.5", "0").0, 2);
}

#[test]
fn calibrate_folds_in_false_alarms() {
    let fx = trained(11);
    let mut rows = String::from("batch_file,label\n");
    for i in 0..3 {
        let name = format!("fb{i}.csv");
        write_input(&fx, &name, 100, 900 + i, 0.0);
        rows.push_str(&format!("{name},false_alarm\n"));
    }
    write_input(&fx, "fb_drift.csv", 100, 950, 3.0);
    rows.push_str("fb_drift.csv,true_violation\n");
    std::fs::write(fx.path("feedback.csv"), rows).unwrap();

    let out = mlguard(&[
        "calibrate",
        s(&fx.path("bundle")),
        "--feedback",
        s(&fx.path("feedback.csv")),
        "--out",
        s(&fx.path("recal")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let before = mlguard::load_bundle(&fx.path("bundle")).unwrap();
    let after = mlguard::load_bundle(&fx.path("recal")).unwrap();
    let n = |b: &mlguard::GuardBundle| {
        b.detectors["Distribution_Matches"]
            .calibration
            .as_ref()
            .unwrap()
            .scores
            .len()
    };
    assert_eq!(n(&after), n(&before) + 300);
    assert_eq!(after.contract, before.contract);
}

#[test]
fn calibrate_rejects_unknown_label() {
    let fx = trained(12);
    write_input(&fx, "fb.csv", 100, 1, 0.0);
    std::fs::write(fx.path("feedback.csv"), "batch_file,label\nfb.csv,maybe\n").unwrap();
    let out = mlguard(&[
        "calibrate",
        s(&fx.path("bundle")),
        "--feedback",
        s(&fx.path("feedback.csv")),
        "--out",
        s(&fx.path("recal")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(!fx.path("recal").exists());
}

#[test]
fn synth_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let out = mlguard(&["synth", "--rows", "10", "--features", "3", "--seed", "1", "--out", s(&path)]);
    assert_eq!(code(&out), 0);
    let batch = mlguard::RecordBatch::read_csv_path(&path).unwrap();
    assert_eq!(batch.len(), 10);
    assert_eq!(batch.columns(), ["f_00", "f_01", "f_02"]);
    assert_eq!(
        code(&mlguard(&["synth", "--rows", "1", "--features", "1", "--distribution", "cauchy", "--out", s(&path)])),
        2
    );
}
