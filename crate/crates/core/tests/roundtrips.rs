use std::path::Path;

use resilience_core::backend::ReferenceBackend;
use resilience_core::claims::{desk_pool, parse_pool, pool_to_json, DESK_POOL_JSON};
use resilience_core::community::Community;
use resilience_core::config::{RunConfig, DESK_CONFIG};
use resilience_core::engine::RunLog;
use resilience_core::pipeline;

fn small_config(dir: &Path) -> RunConfig {
    let text = format!(
        "output_dir = {:?}\nmaster_seed = 3\n[community]\nids = [\"G02\", \"G15\"]\nn = 24\n[simulation]\nrounds = 5\nrho = 0.1\nseeds = [0, 1]\n\n[[arms]]\nkind = \"control\"\n\n[[arms]]\nkind = \"source_warning\"\n",
        dir.join("sweep").display().to_string()
    );
    RunConfig::from_toml(&text, dir).unwrap()
}

#[test]
fn pool_round_trip_is_byte_identical() {
    let pool = parse_pool(DESK_POOL_JSON).unwrap();
    assert_eq!(pool.len(), 12);
    assert_eq!(pool_to_json(&pool).unwrap(), DESK_POOL_JSON);
}

#[test]
fn unknown_pool_fields_survive() {
    let mut value: serde_json::Value = serde_json::from_str(DESK_POOL_JSON).unwrap();
    value[0]["annotator_note"] = serde_json::json!("kept");
    let text = serde_json::to_string_pretty(&value).unwrap() + "\n";
    let written = pool_to_json(&parse_pool(&text).unwrap()).unwrap();
    assert!(written.contains("\"annotator_note\": \"kept\""));
    assert_eq!(pool_to_json(&parse_pool(&written).unwrap()).unwrap(), written);
}

#[test]
fn sweep_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let summary = pipeline::simulate(&config, &ReferenceBackend::default()).unwrap();
    assert_eq!(summary.logs.len(), 2 * 2 * 2);
    let out = dir.path().join("sweep");

    for log_path in &summary.logs {
        let text = std::fs::read_to_string(log_path).unwrap();
        let log = RunLog::from_jsonl(&text).unwrap();
        assert_eq!(log.to_jsonl().unwrap(), text);
        assert_eq!(log.header.config_hash, config.hash());
        assert!(log.header.seed <= 1);
    }
    let community_text = std::fs::read_to_string(out.join("communities/G02_s0.json")).unwrap();
    let community = Community::from_json(&community_text).unwrap();
    assert_eq!(community.to_json().unwrap(), community_text);

    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(written, config.to_toml().unwrap());
    let reparsed = RunConfig::from_toml(&written, dir.path()).unwrap();
    assert_eq!(reparsed.to_toml().unwrap(), written);
    assert_eq!(reparsed.hash(), config.hash());

    let manifest = pipeline::verify_manifest(&out).unwrap();
    assert_eq!(manifest.files.len(), 1 + 2 * 2 * (2 + 2));
    assert_eq!(manifest.claim_id, "M12");
}

#[test]
fn bundled_config_text_round_trips() {
    let config = RunConfig::from_toml(DESK_CONFIG, Path::new(".")).unwrap();
    let text = config.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&text, Path::new(".")).unwrap().to_toml().unwrap(), text);
    assert_eq!(config.claim().unwrap(), desk_pool().into_iter().find(|c| c.id == "M12").unwrap());
}

#[test]
fn corrupt_log_lines_are_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let summary = pipeline::simulate(&config, &ReferenceBackend::default()).unwrap();
    let path = &summary.logs[0];
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{not json";
    let corrupt = lines.join("\n") + "\n";
    assert!(RunLog::from_jsonl(&corrupt).is_err());
    let (log, skipped) = RunLog::parse_lenient(&corrupt).unwrap();
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0].0, 4);
    assert_eq!(log.records.len(), 24 * 5 - 1);
}
