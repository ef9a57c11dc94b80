use std::path::{Path, PathBuf};

use resilience_core::backend::ReferenceBackend;
use resilience_core::config::RunConfig;
use resilience_core::metrics::rows_from_csv;
use resilience_core::pipeline;
use resilience_core::reference_data::{score_table, PRIMARY_BACKBONE, TRAJECTORIES_CSV};
use resilience_core::Error;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn reference_trajectories_reproduce_the_score_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "traj.csv", TRAJECTORIES_CSV);
    let summary = pipeline::analyze(&[input], None).unwrap();
    assert_eq!(summary.rows.len(), 64);
    for row in score_table().unwrap() {
        let got = summary
            .rows
            .iter()
            .find(|r| r.community_id == row.community_id && r.backend_id == row.backbone)
            .unwrap();
        assert!((got.robustness - row.robustness).abs() < 0.01, "{} {}", row.community_id, row.backbone);
        assert!((got.recovery - row.recovery).abs() < 0.01, "{} {}", row.community_id, row.backbone);
    }
}

#[test]
fn report_on_reference_data_ranks_g10_first_and_g01_last() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "traj.csv", TRAJECTORIES_CSV);
    let csv = dir.path().join("metrics.csv");
    pipeline::analyze(&[input], Some(&csv)).unwrap();
    let report = pipeline::report(&csv, &[], &dir.path().join("report")).unwrap();
    let map = &report.maps.iter().find(|m| m.backend_id == PRIMARY_BACKBONE).unwrap().map;
    assert_eq!(map.entries.first().unwrap().community_id, "G10");
    assert_eq!(map.entries.last().unwrap().community_id, "G01");
    assert!(!map.degenerate_robustness && !map.degenerate_recovery);
    for f in ["report.json", "report.md", "map_Qwen3-4B.svg"] {
        assert!(dir.path().join("report").join(f).is_file(), "{f}");
    }
}

#[test]
fn analyze_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let text = "output_dir = \"sweep\"\n[community]\nids = [\"G10\"]\nn = 30\n[simulation]\nrounds = 10\nrho = 0.1\nseeds = [0, 1]\n[[arms]]\nkind = \"control\"\n[[arms]]\nkind = \"persuasion\"\n";
    let config = RunConfig::from_toml(text, dir.path()).unwrap();
    pipeline::simulate(&config, &ReferenceBackend::default()).unwrap();
    let sweep = dir.path().join("sweep");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let first = pipeline::analyze(std::slice::from_ref(&sweep), Some(&a)).unwrap();
    pipeline::analyze(std::slice::from_ref(&sweep), Some(&b)).unwrap();
    assert_eq!(first.rows.len(), 4);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // Re-reading the CSV and writing it again is also stable.
    let rows = rows_from_csv(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(resilience_core::metrics::rows_to_csv(&rows).unwrap(), std::fs::read_to_string(&a).unwrap());

    let report = pipeline::report(&a, &[sweep.join("logs")], &dir.path().join("rep")).unwrap();
    assert_eq!(report.movements.len(), 1);
    assert_eq!(report.deltas.len(), 2);
    assert_eq!(report.arm_shifts[0].pairs, 2);
}

#[test]
fn single_run_map_is_flagged_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "community_id,backend_id,seed,arm,round,trust\nG05,b,0,control,0,0.0\nG05,b,0,control,1,0.5\nG05,b,0,control,2,0.25\n";
    let input = write(dir.path(), "one.csv", csv);
    let metrics = dir.path().join("m.csv");
    pipeline::analyze(&[input], Some(&metrics)).unwrap();
    let report = pipeline::report(&metrics, &[], &dir.path().join("r")).unwrap();
    let map = &report.maps[0].map;
    assert!(map.degenerate_robustness && map.degenerate_recovery);
    assert_eq!(map.entries[0].rank, 1);
}

#[test]
fn analyze_reports_partial_and_total_failure() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.csv", "community_id,backend_id,seed,arm,round,trust\nG01,b,0,control,0,0\nG01,b,0,control,1,1\n");
    let bad = write(dir.path(), "bad.jsonl", "not a log\n");
    let partial = pipeline::analyze(&[good, bad.clone()], None).unwrap();
    assert_eq!(partial.rows.len(), 1);
    assert_eq!(partial.failed.len(), 1);
    let err = pipeline::analyze(&[bad], None).unwrap_err();
    assert!(matches!(err, Error::NoData(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn report_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "x.csv", "a,b\n1,2\n");
    let err = pipeline::report(&csv, &[], dir.path()).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn score_pool_records_the_backend_score() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scored.json");
    let pool = resilience_core::claims::desk_pool();
    let scored = pipeline::score_pool(&pool, &ReferenceBackend::default(), 1, &out).unwrap();
    assert_eq!(scored.len(), 12);
    for c in &scored {
        assert!(c.credibility_scores.contains_key("reference"));
        c.validate().unwrap();
    }
    let back = resilience_core::claims::load_pool(&out).unwrap();
    assert_eq!(back, scored);
}

#[test]
fn calibrate_writes_a_zero_loss_report_for_the_reference_responder() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::desk();
    let report = pipeline::calibrate(&config, &ReferenceBackend::default(), dir.path()).unwrap();
    assert_eq!(report.cohort_size, 500);
    assert_eq!(report.selected_loss, 0.0);
    assert_eq!(report.alignment.mean.accuracy, 1.0);
    assert!(dir.path().join("calibration_report.json").is_file());
}
