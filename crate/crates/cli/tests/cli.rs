//! End-to-end tests of the `promptfactor` binary: every subcommand runs as
//! a real process against files in a temporary directory.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptfactor"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(cmd: &mut Command) -> serde_json::Value {
    let output = cmd.output().expect("binary runs");
    assert!(
        !output.status.success(),
        "command unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| {
        panic!("stderr is not a JSON error object ({e}): {stderr}");
    })
}

fn write_model(dir: &Path) {
    let spec = serde_json::json!({
        "separator": " ",
        "strata": [
            {"name": "instruction", "kind": "variable", "components": [
                {"id": "a", "text": "alpha", "tags": ["pos"]},
                {"id": "a2", "text": "alpha two"}
            ]},
            {"name": "example", "kind": "variable", "components": [
                {"id": "b", "text": "beta"}
            ]},
            {"name": "extra", "kind": "variable", "components": [
                {"id": "c", "text": "gamma"}
            ]},
            {"name": "query", "kind": "static", "components": [
                {"id": "q", "text": "3+2="}
            ]}
        ],
        "query_stratum": 3
    });
    fs::write(
        dir.join("model.json"),
        serde_json::to_string_pretty(&spec).unwrap(),
    )
    .unwrap();
}

fn write_manifest(dir: &Path) {
    let out_dir = dir.join("run");
    let manifest = serde_json::json!({
        "model_file": "model.json",
        "scorer": {
            "kind": "synthetic",
            "intercept": 1.0,
            "weights": [
                {"components": ["a"], "weight": 0.8},
                {"components": ["b"], "weight": 0.4},
                {"components": ["a", "b"], "weight": 0.25}
            ],
            "noise_sd": 0.001
        },
        "terms": {"interaction_strata": [0, 1, 2], "max_order": 2},
        "fit": {
            "family": "ols",
            "target": "dcpmi",
            "repeats": 2,
            "grid": {"lo": 0.0, "hi": 0.01, "step": 0.002}
        },
        "selection": {
            "alpha": 0.05,
            "max_level": 2,
            "interaction_strata": [0, 1, 2]
        },
        "out_dir": out_dir,
        "seed": 11
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();
}

#[test]
fn validate_prints_model_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    let output = run_ok(bin().args(["validate", "--model"]).arg(dir.path().join("model.json")));
    let diag: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(diag["strata"], 4);
    assert_eq!(diag["variable_strata"], 3);
    assert_eq!(diag["subprompts"], 12);
}

#[test]
fn enumerate_ends_with_the_count() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    let output = run_ok(bin().args(["enumerate", "--model"]).arg(dir.path().join("model.json")));
    let stdout = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 13);
    assert_eq!(lines[0], "0:|1:|2:");
    assert_eq!(*lines.last().unwrap(), "12");
}

#[test]
fn pipeline_stages_run_in_order_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    write_manifest(dir.path());
    let manifest = dir.path().join("manifest.json");
    let out = dir.path().join("run");

    for stage in ["score", "fit", "path", "select", "shapley", "report"] {
        run_ok(bin().args([stage, "--manifest"]).arg(&manifest));
    }

    for artifact in [
        "manifest.json",
        "scores.jsonl",
        "fit_ols.json",
        "lasso_path.csv",
        "selection_trace.jsonl",
        "fit_selected.json",
        "shapley.csv",
        "shapley.json",
    ] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }
    for name in [
        "coefficients.csv",
        "dcpmi_hist.csv",
        "qq.csv",
        "lasso_path.csv",
        "summary.json",
    ] {
        assert!(out.join("report").join(name).is_file(), "missing report/{name}");
    }
    // The copy in the output directory is byte-identical to the input.
    assert_eq!(
        fs::read(out.join("manifest.json")).unwrap(),
        fs::read(&manifest).unwrap()
    );
}

#[test]
fn fit_before_score_names_the_missing_command() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    write_manifest(dir.path());
    let err = run_err(bin().args(["fit", "--manifest"]).arg(dir.path().join("manifest.json")));
    let message = err["error"].as_str().unwrap();
    assert!(message.contains("scores.jsonl"), "{message}");
    assert!(message.contains("`score`"), "{message}");
}

#[test]
fn malformed_grid_flag_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    write_manifest(dir.path());
    let err = run_err(
        bin()
            .args(["path", "--manifest"])
            .arg(dir.path().join("manifest.json"))
            .args(["--grid", "nonsense"]),
    );
    assert!(err["error"].as_str().unwrap().contains("lo:hi:step"));
}

#[test]
fn seed_override_creates_a_distinct_provenance_unit() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    write_manifest(dir.path());
    let manifest = dir.path().join("manifest.json");

    run_ok(bin().args(["score", "--manifest"]).arg(&manifest));
    // The same output directory under a different seed is a different run:
    // refused before anything is overwritten.
    let err = run_err(
        bin()
            .args(["score", "--manifest"])
            .arg(&manifest)
            .args(["--seed", "99"]),
    );
    assert!(err["error"].as_str().unwrap().contains("different manifest"));

    // Redirected to a fresh directory the override works, and the copied
    // manifest records the effective seed.
    let out2 = dir.path().join("run2");
    run_ok(
        bin()
            .args(["score", "--manifest"])
            .arg(&manifest)
            .args(["--seed", "99", "--out"])
            .arg(&out2),
    );
    let copied = fs::read_to_string(out2.join("manifest.json")).unwrap();
    assert!(copied.contains("\"seed\": 99"), "{copied}");
    run_ok(
        bin()
            .args(["fit", "--manifest"])
            .arg(&manifest)
            .args(["--seed", "99", "--out"])
            .arg(&out2),
    );
    assert!(out2.join("fit_ols.json").is_file());
}

#[test]
fn scorer_override_rejects_unreachable_kinds() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    write_manifest(dir.path());
    let err = run_err(
        bin()
            .args(["score", "--manifest"])
            .arg(dir.path().join("manifest.json"))
            .args(["--scorer", "endpoint"]),
    );
    assert!(err["error"]
        .as_str()
        .unwrap()
        .contains("cannot be derived"));
}
