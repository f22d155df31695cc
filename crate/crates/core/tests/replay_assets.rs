//! The shipped replay recording stays in lockstep with the code: every
//! recorded request is re-derived from the shipped model and endpoint
//! config, and a full offline scoring run consumes the recording exactly.

use std::path::PathBuf;

use promptfactor::pipeline::{cmd_score, load_manifest, LoadedManifest, ScorerSpec};
use promptfactor::prompt_model::PromptModel;
use promptfactor::scorer_backends::{completion_request_body, ReplayEntry};

fn asset_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets/replay")
}

#[test]
fn shipped_fixture_requests_match_the_request_builder() {
    let loaded = load_manifest(asset_dir().join("manifest.json")).unwrap();
    let ScorerSpec::Replay { config, .. } = &loaded.manifest.scorer else {
        panic!("shipped manifest must use the replay scorer");
    };
    let model = PromptModel::from_file(asset_dir().join("model.json")).unwrap();

    // Logical request order: the baseline query, then every subprompt in
    // enumeration order (single-threaded replay scoring is first-in
    // first-out).
    let mut expected = vec![completion_request_body(config, model.query_text())];
    for sub in model.enumerate().unwrap() {
        expected.push(completion_request_body(config, sub.rendered()));
    }

    let text = std::fs::read_to_string(asset_dir().join("fixtures.jsonl")).unwrap();
    let entries: Vec<ReplayEntry> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();

    // Each logical request may be preceded by scripted failures for the
    // same body (the retry path); the final entry per request succeeds.
    let mut idx = 0;
    for body in &expected {
        while entries[idx].status / 100 != 2 {
            assert_eq!(&entries[idx].request, body);
            assert_eq!(entries[idx].url, config.completions_url());
            idx += 1;
        }
        assert_eq!(&entries[idx].request, body);
        assert_eq!(entries[idx].url, config.completions_url());
        idx += 1;
    }
    assert_eq!(idx, entries.len(), "recording holds no unexplained entries");
    assert!(
        entries.iter().any(|e| e.status / 100 != 2),
        "recording should script at least one retried failure"
    );
}

#[test]
fn shipped_recording_scores_offline() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = load_manifest(asset_dir().join("manifest.json")).unwrap();
    let mut manifest = loaded.manifest.clone();
    manifest.out_dir = dir.path().join("run");
    let loaded = LoadedManifest::from_value(manifest, loaded.base_dir().to_path_buf()).unwrap();

    let table = cmd_score(&loaded).unwrap();
    assert_eq!(table.len(), 3);

    let baseline = (-0.967584f64).exp();
    let all_empty = table.get("0:", 0).unwrap();
    assert_eq!(all_empty.raw, baseline);
    // The bare-instruction subprompt replays the same exchange as the
    // baseline query, so its ratio is exactly one.
    assert_eq!(all_empty.dcpmi, 1.0);

    let calm = table.get("0:calm", 0).unwrap();
    assert_eq!(calm.raw, (-0.417215f64).exp());
    let expert = table.get("0:expert", 0).unwrap();
    assert!((expert.dcpmi - (-0.198451f64).exp() / baseline).abs() < 1e-12);
}
