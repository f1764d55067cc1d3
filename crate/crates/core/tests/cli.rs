//! End-to-end runs of the `loadveil` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use loadveil::meterdata::{load_csv, synthetic_epoch, write_csv, ReadingBatch};
use loadveil::sparse_coding::{random_dictionary, Dictionary};
use tempfile::TempDir;

fn loadveil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadveil"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, t: &str, batches: &str) {
    let out = loadveil(dir, &["synth", "--t", t, "--batches", batches, "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let args = ["synth", "--appliances", "fridge:100:20:20", "--t", "96", "--batches", "50", "--seed", "7"];
    assert_eq!(code(&loadveil(dir.path(), &args)), 0);
    let first = (
        fs::read(dir.path().join("readings.csv")).unwrap(),
        fs::read(dir.path().join("truth.csv")).unwrap(),
    );
    assert_eq!(code(&loadveil(dir.path(), &args)), 0);
    assert_eq!(first.0, fs::read(dir.path().join("readings.csv")).unwrap());
    assert_eq!(first.1, fs::read(dir.path().join("truth.csv")).unwrap());
    assert_eq!(load_csv(dir.path().join("readings.csv"), 96).unwrap().len(), 50);
}

#[test]
fn synth_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = loadveil(dir.path(), &["synth", "--batches", "3"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    let out = loadveil(dir.path(), &["synth", "--t", "8", "--appliances", "fridge:100:20:20:1.0"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&loadveil(dir.path(), &["synth", "--t", "8", "--bogus"])), 2);
    assert_eq!(code(&loadveil(dir.path(), &[])), 2);
    assert_eq!(code(&loadveil(dir.path(), &["--help"])), 0);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.conf"), "# synthetic run\nt = 16\nbatches = 3\noutput = conf.csv\n").unwrap();
    let out = loadveil(dir.path(), &["--config", "run.conf", "synth", "--batches", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let batches = load_csv(dir.path().join("conf.csv"), 16).unwrap();
    assert_eq!(batches.len(), 2);
    assert!(batches.iter().all(|b| b.len() == 16));
    assert_eq!(code(&loadveil(dir.path(), &["--config", "missing.conf", "synth", "--t", "4"])), 1);
}

#[test]
fn train_writes_unit_column_dictionary() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "24", "50");
    let out = loadveil(
        dir.path(),
        &["train", "--input", "readings.csv", "--t", "24", "--n", "48", "--seed", "3", "--output", "dict.txt"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("final objective"));
    assert!(stderr(&out).contains("iteration"));
    let d = Dictionary::load(dir.path().join("dict.txt")).unwrap();
    assert_eq!((d.t(), d.n()), (24, 48));
    for col in d.basis().columns() {
        assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-9);
        assert!(col.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn train_with_zero_iterations_keeps_seeded_init() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "8", "10");
    for (name, seed) in [("a.txt", "5"), ("b.txt", "5")] {
        let out = loadveil(
            dir.path(),
            &["train", "--input", "readings.csv", "--t", "8", "--n", "12", "--max-iters", "0", "--seed", seed, "--output", name],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let batches = load_csv(dir.path().join("readings.csv"), 8).unwrap();
    let mut cfg = loadveil::sparse_coding::TrainingConfig::new(12);
    cfg.seed = 5;
    let init = loadveil::sparse_coding::init_dictionary(&batches, &cfg).unwrap();
    assert_eq!(Dictionary::load(dir.path().join("a.txt")).unwrap(), init);
}

#[test]
fn train_rejects_undercomplete() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "8", "4");
    let out = loadveil(dir.path(), &["train", "--input", "readings.csv", "--t", "8", "--n", "8"]);
    assert_eq!(code(&out), 2);
    let out = loadveil(dir.path(), &["train", "--input", "absent.csv", "--t", "8", "--n", "16"]);
    assert_eq!(code(&out), 1);
}

fn write_dictionary(dir: &Path, t: usize, n: usize) {
    random_dictionary(t, n, 11).unwrap().save(dir.join("dict.txt")).unwrap();
}

#[test]
fn obfuscate_identity_matches_reaggregation() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "12", "5");
    write_dictionary(dir.path(), 12, 24);
    let out = loadveil(
        dir.path(),
        &["obfuscate", "--dictionary", "dict.txt", "--input", "readings.csv", "--f", "0", "--output", "out.csv"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("epsilon_paper"));

    let dict = Dictionary::load(dir.path().join("dict.txt")).unwrap();
    let original = load_csv(dir.path().join("readings.csv"), 12).unwrap();
    let obfuscated = load_csv(dir.path().join("out.csv"), 12).unwrap();
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
    assert_eq!(sidecar.as_array().unwrap().len(), original.len());
    for (y, o) in original.iter().zip(&obfuscated) {
        let a = loadveil::sparse_coding::infer_activation(y.values(), &dict, {
            loadveil::sparse_coding::Lambda::default().resolve_for(y.values(), &dict).unwrap()
        })
        .unwrap();
        let fit = dict.reconstruct(&a).unwrap();
        for (p, q) in o.values().iter().zip(fit.iter()) {
            // The CSV stores shortest round-trip decimals, so values are exact.
            assert_eq!(*p, q.max(0.0));
        }
    }
}

#[test]
fn obfuscate_is_byte_identical_per_seed() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "12", "6");
    write_dictionary(dir.path(), 12, 24);
    let mut outputs = Vec::new();
    for name in ["one.csv", "two.csv"] {
        let out = loadveil(
            dir.path(),
            &["obfuscate", "--dictionary", "dict.txt", "--input", "readings.csv", "--f", "0.4", "--seed", "9", "--output", name],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(fs::read(dir.path().join(name)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn obfuscate_length_mismatch_names_both_sizes() {
    let dir = TempDir::new().unwrap();
    let batch = ReadingBatch::new("m", synthetic_epoch(), 900, vec![1.0; 48]).unwrap();
    write_csv(&[batch], dir.path().join("short.csv")).unwrap();
    write_dictionary(dir.path(), 96, 120);
    let out = loadveil(dir.path(), &["obfuscate", "--dictionary", "dict.txt", "--input", "short.csv", "--f", "0.5"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("96") && err.contains("48"), "{err}");
    let out = loadveil(dir.path(), &["obfuscate", "--dictionary", "dict.txt", "--input", "short.csv", "--f", "1.5"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn full_run_produces_schema_report() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "24", "30");
    let steps: [&[&str]; 3] = [
        &["train", "--input", "readings.csv", "--t", "24", "--n", "48", "--seed", "1"],
        &["obfuscate", "--dictionary", "dictionary.txt", "--input", "readings.csv", "--f", "0.5", "--seed", "2"],
        &[
            "evaluate", "--original", "readings.csv", "--obfuscated", "obfuscated.csv", "--truth", "truth.csv",
            "--t", "24", "--sidecar", "obfuscated.json", "--f", "0.5",
        ],
    ];
    for step in steps {
        let out = loadveil(dir.path(), step);
        assert_eq!(code(&out), 0, "{step:?}: {}", stderr(&out));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let top: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(top.len(), 4);
    for key in ["appliances", "utility", "privacy", "config"] {
        assert!(top.contains(&key), "{key}");
    }
    let rows = report["appliances"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        for side in ["original", "obfuscated"] {
            for metric in ["precision", "recall", "f1"] {
                let v = row[side][metric].as_f64().unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
    assert!(report["utility"]["mae_watts"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["privacy"]["f"].as_f64(), Some(0.5));
    assert!(report["privacy"]["epsilon_mechanism"].as_f64().unwrap() > 0.0);
    assert_eq!(report["config"]["averaging"], "micro");
    assert_eq!(report["config"]["schema_version"], 1);
}

#[test]
fn evaluate_errors() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), "8", "4");
    let out = loadveil(
        dir.path(),
        &["evaluate", "--original", "readings.csv", "--obfuscated", "readings.csv", "--truth", "nope.csv", "--t", "8"],
    );
    assert_eq!(code(&out), 1);

    let fewer = load_csv(dir.path().join("readings.csv"), 8).unwrap();
    write_csv(&fewer[..2], dir.path().join("fewer.csv")).unwrap();
    let out = loadveil(
        dir.path(),
        &["evaluate", "--original", "readings.csv", "--obfuscated", "fewer.csv", "--truth", "truth.csv", "--t", "8"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn epsilon_command() {
    let dir = TempDir::new().unwrap();
    let out = loadveil(dir.path(), &["epsilon", "--f", "0.5", "--delta0", "0.05"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("epsilon_paper 2.995732"), "{}", stdout(&out));
    let out = loadveil(dir.path(), &["epsilon", "--f", "0.5", "--n", "4"]);
    assert_eq!(code(&out), 0);
    let mech: f64 = stdout(&out)
        .trim()
        .strip_prefix("epsilon_mechanism ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((mech - 5f64.ln()).abs() < 1e-6);
    for f in ["1.0", "0", "-0.2"] {
        assert_eq!(code(&loadveil(dir.path(), &["epsilon", "--f", f, "--n", "4"])), 2, "f={f}");
    }
}
