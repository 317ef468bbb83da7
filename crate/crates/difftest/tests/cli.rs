//! End-to-end checks of the `difftest` binary: simulate -> test -> experiment,
//! JSON output shape, seed override, and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_difftest"))
}

fn write_test_spec(dir: &Path) -> std::path::PathBuf {
    let spec = serde_json::json!({
        "space": {
            "alpha_lower": [0.1], "alpha_upper": [5.0],
            "beta_lower": [-10.0], "beta_upper": [10.0]
        },
        "hyp1": { "alpha_fixed": [[0, 1.0]], "beta_fixed": [] },
        "hyp2": { "alpha_fixed": [], "beta_fixed": [[0, 2.0]] }
    });
    let p = dir.join("spec.json");
    std::fs::write(&p, spec.to_string()).unwrap();
    p
}

#[test]
fn simulate_then_test_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("path.csv.gz");
    let out = bin()
        .args(["simulate", "--model", "ou", "--alpha", "1.0", "--beta", "2.0"])
        .args(["--n", "4000", "--seed", "11", "--exact-ou"])
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.exists());

    let spec = write_test_spec(dir.path());
    let report_file = dir.path().join("report.json");
    let out = bin()
        .args(["test", "--model", "ou", "--json"])
        .arg("--data")
        .arg(&data)
        .arg("--config")
        .arg(&spec)
        .arg("--out")
        .arg(&report_file)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Structural check of the JSON report.
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for stage in ["stage1", "stage2"] {
        let s = &report[stage];
        for key in ["lambda", "wald", "rao", "p_lambda", "p_wald", "p_rao"] {
            assert!(s[key].is_number(), "missing {stage}.{key}: {report}");
        }
        assert!(s["df"].is_u64());
        assert!(s["reject_lambda"].is_boolean());
    }
    for key in ["case_lambda", "case_wald", "case_rao"] {
        let c = report[key].as_u64().unwrap();
        assert!((1..=4).contains(&c));
    }
    assert!(report["alpha_hat"].as_array().unwrap().len() == 1);
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_file).unwrap()).unwrap();
    assert_eq!(report, on_disk);
}

#[test]
fn experiment_writes_outputs_and_respects_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "model": "ou",
        "space": {
            "alpha_lower": [0.1], "alpha_upper": [5.0],
            "beta_lower": [-10.0], "beta_upper": [10.0]
        },
        "truth": { "alpha": [1.0], "beta": [2.0] },
        "hyp1": { "alpha_fixed": [[0, 1.0]], "beta_fixed": [] },
        "hyp2": { "alpha_fixed": [], "beta_fixed": [[0, 2.0]] },
        "n_list": [400],
        "replications": 6,
        "epsilon": 0.05,
        "master_seed": 1,
        "mode": "null_dist",
        "exact_ou": true
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();

    let run = |out_dir: &Path, seed: &str| {
        let out = bin()
            .args(["experiment", "--quiet"])
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out-dir")
            .arg(out_dir)
            .env("DIFFTEST_SEED", seed)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let d1 = dir.path().join("a");
    let d2 = dir.path().join("b");
    let d3 = dir.path().join("c");
    run(&d1, "99");
    run(&d2, "99");
    run(&d3, "100");

    for d in [&d1, &d2, &d3] {
        for f in ["summary.json", "cases.csv", "rates.csv", "samples_n400.csv"] {
            assert!(d.join(f).exists(), "missing {f} in {}", d.display());
        }
        assert!(d.join("hist_n400_lambda_stage1.csv").exists());
    }
    let s1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d1.join("summary.json")).unwrap()).unwrap();
    let s2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d2.join("summary.json")).unwrap()).unwrap();
    let s3: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d3.join("summary.json")).unwrap()).unwrap();
    // The config echo records the effective (overridden) seed.
    assert_eq!(s1["config"]["master_seed"], 99);
    assert_eq!(s1["per_n"], s2["per_n"], "same seed must reproduce");
    assert_ne!(s1["per_n"], s3["per_n"], "different seed should differ");
}

#[test]
fn exit_codes_for_bad_inputs() {
    // Unknown model -> invalid input (2).
    let out = bin()
        .args(["simulate", "--model", "nope", "--alpha", "1.0", "--beta", "2.0"])
        .args(["--n", "100", "--out", "/tmp/never-written.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Malformed data file -> data error (4).
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,x1\n0.0,1.0\nnot,a-number\n").unwrap();
    let spec = write_test_spec(dir.path());
    let out = bin()
        .args(["test", "--model", "ou"])
        .arg("--data")
        .arg(&bad)
        .arg("--config")
        .arg(&spec)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // Missing config file -> I/O error (5).
    let out = bin()
        .args(["experiment", "--config", "/nonexistent/cfg.json", "--out-dir", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn bundled_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        if path.file_name().unwrap().to_str().unwrap().contains("test_spec") {
            let _: serde_json::Value = serde_json::from_str(&text).unwrap();
        } else {
            let cfg: difftest::mc::ExperimentConfig = serde_json::from_str(&text).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        seen += 1;
    }
    assert!(seen >= 8, "expected the bundled config set, found {seen}");
}
