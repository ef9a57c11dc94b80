//! Command orchestration: sweeps, persistence, analysis and reports.
//!
//! Output layout of one sweep directory:
//!
//! ```text
//! config.toml
//! manifest.json
//! communities/<community>_s<seed>.json
//! graphs/<community>_s<seed>.edges
//! logs/<community>_s<seed>_<arm>.jsonl
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::AgentBackend;
use crate::calibration::{self, CalibrationConfig, CalibrationReport};
use crate::claims::{self, Claim};
use crate::community::build_community;
use crate::config::RunConfig;
use crate::engine::{run_simulation, RunLog, TrustTrajectory};
use crate::error::{Error, Result};
use crate::metrics::{self, InterventionDelta, MetricsRow, ResilienceMap, ResilienceScore, StanceShift};
use crate::network::watts_strogatz;
use crate::reference_data::{parse_trajectories, TRAJECTORY_HEADER};
use crate::seed::{stream_seed, Purpose};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Filesystem-safe form of an identifier.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub master_seed: u64,
    pub backend_id: String,
    pub claim_id: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<String>,
    pub communities: Vec<String>,
    /// Agent-rounds whose backend call failed after retries.
    pub failed_agent_rounds: usize,
    /// Sorted by path.
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub out_dir: PathBuf,
    pub logs: Vec<PathBuf>,
    pub manifest: Manifest,
}

struct RunFiles {
    files: Vec<(String, String)>,
    failures: usize,
}

fn edge_list_header(community: &str, seed: u64, config_hash: &str, n: usize) -> String {
    format!(
        "# community={community} seed={seed} n={n} config_hash={config_hash} version={}\n",
        crate::VERSION
    )
}

/// Run every `(community, seed, arm)` of the configuration and write the
/// sweep directory. The backend is probed once before any work.
pub fn simulate(config: &RunConfig, backend: &dyn AgentBackend) -> Result<SimulateSummary> {
    backend.probe()?;
    let out = config.output_path();
    let claim = config.claim()?;
    let backgrounds = config.backgrounds()?;
    let template = config.template()?;
    let params = config.simulation.params();
    let hash = config.hash();
    let master = config.master_seed;
    let communities = config.communities();

    let jobs: Vec<(&(String, _, _), u64)> = communities
        .iter()
        .flat_map(|c| config.simulation.seeds.iter().map(move |&s| (c, s)))
        .collect();

    let run_job = |((id, aot, pi), s): (&(String, _, _), u64)| -> Result<RunFiles> {
        let community = build_community(
            id,
            aot,
            pi,
            config.community.n,
            &backgrounds,
            &template,
            stream_seed(master, id, s, Purpose::Traits),
        )?;
        let graph = watts_strogatz(
            config.community.n,
            config.graph.k,
            config.graph.p_rewire,
            stream_seed(master, id, s, Purpose::Graph),
        )?;
        let exposure_seed = stream_seed(master, id, s, Purpose::Exposure);
        let stem = format!("{id}_s{s}");
        let mut files = vec![
            (format!("communities/{stem}.json"), community.to_json()?),
            (
                format!("graphs/{stem}.edges"),
                edge_list_header(id, s, &hash, graph.n()) + &graph.to_edge_list(),
            ),
        ];
        let mut failures = 0;
        for arm in &config.arms {
            let mut output = run_simulation(&community, &graph, &claim, &params, arm, backend, exposure_seed)?;
            output.log.header.seed = s;
            output.log.header.config_hash = hash.clone();
            failures += output.log.records.iter().filter(|r| r.failure.is_some()).count();
            files.push((
                format!("logs/{stem}_{}.jsonl", file_stem(&arm.id())),
                output.log.to_jsonl()?,
            ));
        }
        Ok(RunFiles { files, failures })
    };

    // Jobs are independent and each owns its output files. Remote backends
    // rely on the per-round in-flight limit instead.
    let results: Vec<RunFiles> = if backend.is_local() {
        jobs.into_par_iter().map(run_job).collect::<Result<_>>()?
    } else {
        jobs.into_iter().map(run_job).collect::<Result<_>>()?
    };

    let mut files: Vec<(String, String)> = vec![("config.toml".into(), config.to_toml()?)];
    let mut failures = 0;
    for r in results {
        failures += r.failures;
        files.extend(r.files);
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut entries = Vec::with_capacity(files.len());
    let mut logs = Vec::new();
    for (rel, contents) in &files {
        let path = out.join(rel);
        write_file(&path, contents)?;
        if rel.starts_with("logs/") {
            logs.push(path);
        }
        entries.push(ManifestEntry {
            path: rel.clone(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        });
    }
    if failures > 0 {
        log::warn!("{failures} agent-rounds failed after retries; see the failure field in the logs");
    }
    let manifest = Manifest {
        config_hash: hash,
        version: crate::VERSION.to_string(),
        master_seed: master,
        backend_id: backend.id().to_string(),
        claim_id: claim.id.clone(),
        seeds: config.simulation.seeds.clone(),
        arms: config.arms.iter().map(|a| a.id()).collect(),
        communities: communities.iter().map(|c| c.0.clone()).collect(),
        failed_agent_rounds: failures,
        files: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&out.join("manifest.json"), &text)?;
    Ok(SimulateSummary {
        out_dir: out,
        logs,
        manifest,
    })
}

/// Check every file listed in a sweep manifest against its hash.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&read_file(&dir.join("manifest.json"))?)?;
    for entry in &manifest.files {
        let bytes = std::fs::read(dir.join(&entry.path)).map_err(|e| Error::io(dir.join(&entry.path), e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Schema(format!("{}: hash does not match manifest", entry.path)));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeSummary {
    pub rows: Vec<MetricsRow>,
    pub inputs: usize,
    /// Inputs that produced no rows, with the reason.
    pub failed: Vec<(PathBuf, String)>,
    /// Log lines skipped as corrupt: `(file, line, reason)`.
    pub skipped_lines: Vec<(PathBuf, usize, String)>,
    pub csv: String,
}

fn is_trajectory_csv(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .map(|t| t.lines().next().map(str::trim) == Some(TRAJECTORY_HEADER))
        .unwrap_or(false)
}

/// Expand directories (recursively, sorted) into `.jsonl` logs and
/// trajectory `.csv` files. Explicit file arguments are kept as given.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, out)?;
            } else {
                match path.extension().and_then(|e| e.to_str()) {
                    Some("jsonl") => out.push(path),
                    Some("csv") if is_trajectory_csv(&path) => out.push(path),
                    _ => {}
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Rows for a long-format trajectory file. Mechanism columns are empty:
/// such files carry no stance data.
pub fn trajectory_rows(text: &str) -> Result<Vec<MetricsRow>> {
    let source_hash = sha256_hex(text.as_bytes());
    parse_trajectories(text)?
        .into_iter()
        .map(|(key, traj)| {
            let score = ResilienceScore::from_trajectory(&key.community_id, &key.backend_id, key.seed, &traj)?;
            Ok(MetricsRow {
                community_id: key.community_id,
                backend_id: key.backend_id,
                seed: key.seed,
                arm: key.arm,
                claim_id: String::new(),
                exposure: score.exposure,
                robustness: score.robustness,
                recovery: score.recovery,
                peak_round: metrics::peak_round(&traj.values),
                query_generation: None,
                deny_gain: None,
                support_release: None,
                config_hash: source_hash.clone(),
                version: crate::VERSION.to_string(),
            })
        })
        .collect()
}

fn analyze_one(path: &Path, summary: &mut AnalyzeSummary) -> Result<Vec<MetricsRow>> {
    let text = read_file(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        return trajectory_rows(&text);
    }
    let (log, skipped) = RunLog::parse_lenient(&text)?;
    for (line, reason) in skipped {
        log::warn!("{}: line {line} skipped: {reason}", path.display());
        summary.skipped_lines.push((path.to_path_buf(), line, reason));
    }
    Ok(vec![metrics::metrics_row(&log)?])
}

/// Compute one metrics row per run and, when `out` is given, write the
/// sorted CSV. Fails with [`Error::NoData`] only if every input fails.
pub fn analyze(paths: &[PathBuf], out: Option<&Path>) -> Result<AnalyzeSummary> {
    let inputs = collect_inputs(paths)?;
    let mut summary = AnalyzeSummary {
        inputs: inputs.len(),
        ..Default::default()
    };
    for path in &inputs {
        match analyze_one(path, &mut summary) {
            Ok(rows) => summary.rows.extend(rows),
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                summary.failed.push((path.clone(), e.to_string()));
            }
        }
    }
    if summary.rows.is_empty() {
        return Err(Error::NoData(if inputs.is_empty() {
            "no run logs or trajectory files found".into()
        } else {
            format!("all {} inputs failed", inputs.len())
        }));
    }
    summary.csv = metrics::rows_to_csv(&summary.rows)?;
    if let Some(out) = out {
        write_file(out, &summary.csv)?;
    }
    Ok(summary)
}

/// Per-backend resilience map over control rows averaged across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMap {
    pub backend_id: String,
    pub seeds: usize,
    pub map: ResilienceMap,
}

/// Mean movement of one community from control to a treatment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Movement {
    pub backend_id: String,
    pub arm: String,
    pub community_id: String,
    pub seeds: usize,
    pub control: (f64, f64),
    pub treated: (f64, f64),
    pub delta_robustness: f64,
    pub delta_recovery: f64,
}

/// Mean stance shift of one arm over all paired logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmShift {
    pub arm: String,
    pub pairs: usize,
    pub pre_peak: StanceShift,
    /// Over pairs whose control run has a post-peak window.
    pub post_peak: Option<StanceShift>,
    pub delta_robustness: f64,
    pub delta_recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub maps: Vec<BackendMap>,
    pub movements: Vec<Movement>,
    pub deltas: Vec<InterventionDelta>,
    pub arm_shifts: Vec<ArmShift>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

type CellKey = (String, String, String);

/// Seed-averaged `(robustness, recovery)` per `(backend, arm, community)`.
fn cell_means(rows: &[MetricsRow]) -> BTreeMap<CellKey, (f64, f64, usize)> {
    let mut grouped: BTreeMap<CellKey, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        grouped
            .entry((r.backend_id.clone(), r.arm.clone(), r.community_id.clone()))
            .or_default()
            .push(r);
    }
    grouped
        .into_iter()
        .map(|(k, rs)| {
            let rob = mean(rs.iter().map(|r| r.robustness));
            let rec = mean(rs.iter().map(|r| r.recovery));
            (k, (rob, rec, rs.len()))
        })
        .collect()
}

pub const CONTROL_ARM: &str = "control";

/// Maps and movement vectors from metrics rows.
pub fn build_report(rows: &[MetricsRow], logs: &[RunLog]) -> Result<Report> {
    let cells = cell_means(rows);
    let mut maps = Vec::new();
    let backends: Vec<String> = cells
        .keys()
        .filter(|k| k.1 == CONTROL_ARM)
        .map(|k| k.0.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if backends.is_empty() {
        return Err(Error::NoData("no control rows to build a resilience map from".into()));
    }
    for backend in &backends {
        let control: Vec<(&CellKey, &(f64, f64, usize))> =
            cells.iter().filter(|(k, _)| &k.0 == backend && k.1 == CONTROL_ARM).collect();
        let scores: Vec<ResilienceScore> = control
            .iter()
            .map(|(k, (rob, rec, _))| ResilienceScore {
                community_id: k.2.clone(),
                backend_id: backend.clone(),
                seed: 0,
                robustness: *rob,
                recovery: *rec,
                exposure: 100.0 - rob,
            })
            .collect();
        maps.push(BackendMap {
            backend_id: backend.clone(),
            seeds: control.iter().map(|(_, v)| v.2).max().unwrap_or(0),
            map: metrics::resilience_map(&scores)?,
        });
    }
    let mut movements = Vec::new();
    for ((backend, arm, community), (rob, rec, n)) in &cells {
        if arm == CONTROL_ARM {
            continue;
        }
        if let Some((crob, crec, _)) = cells.get(&(backend.clone(), CONTROL_ARM.to_string(), community.clone())) {
            movements.push(Movement {
                backend_id: backend.clone(),
                arm: arm.clone(),
                community_id: community.clone(),
                seeds: *n,
                control: (*crob, *crec),
                treated: (*rob, *rec),
                delta_robustness: rob - crob,
                delta_recovery: rec - crec,
            });
        }
    }

    let mut controls: BTreeMap<(String, String, String, u64), &RunLog> = BTreeMap::new();
    for log in logs {
        let h = &log.header;
        if h.intervention_id == CONTROL_ARM {
            controls.insert((h.community_id.clone(), h.backend_id.clone(), h.claim_id.clone(), h.seed), log);
        }
    }
    let mut deltas = Vec::new();
    for log in logs {
        let h = &log.header;
        if h.intervention_id == CONTROL_ARM {
            continue;
        }
        let key = (h.community_id.clone(), h.backend_id.clone(), h.claim_id.clone(), h.seed);
        match controls.get(&key) {
            Some(control) => deltas.push(metrics::intervention_delta(control, log)?),
            None => log::warn!(
                "{} {} seed {}: no matching control log",
                h.community_id,
                h.intervention_id,
                h.seed
            ),
        }
    }
    deltas.sort_by(|a, b| (&a.arm, &a.community_id, a.seed).cmp(&(&b.arm, &b.community_id, b.seed)));
    let arm_shifts = arm_shifts(&deltas);
    Ok(Report {
        version: crate::VERSION.to_string(),
        maps,
        movements,
        deltas,
        arm_shifts,
    })
}

fn mean_shift<'a>(shifts: impl Iterator<Item = &'a StanceShift>) -> Option<StanceShift> {
    let v: Vec<&StanceShift> = shifts.collect();
    if v.is_empty() {
        return None;
    }
    Some(StanceShift {
        support: mean(v.iter().map(|s| s.support)),
        deny: mean(v.iter().map(|s| s.deny)),
        query: mean(v.iter().map(|s| s.query)),
        comment: mean(v.iter().map(|s| s.comment)),
    })
}

fn arm_shifts(deltas: &[InterventionDelta]) -> Vec<ArmShift> {
    let mut by_arm: BTreeMap<&str, Vec<&InterventionDelta>> = BTreeMap::new();
    for d in deltas {
        by_arm.entry(&d.arm).or_default().push(d);
    }
    by_arm
        .into_iter()
        .map(|(arm, ds)| ArmShift {
            arm: arm.to_string(),
            pairs: ds.len(),
            pre_peak: mean_shift(ds.iter().map(|d| &d.pre_peak)).unwrap_or_default(),
            post_peak: mean_shift(ds.iter().filter_map(|d| d.post_peak.as_ref())),
            delta_robustness: mean(ds.iter().map(|d| d.delta_robustness)),
            delta_recovery: mean(ds.iter().map(|d| d.delta_recovery)),
        })
        .collect()
}

pub fn report_markdown(report: &Report) -> String {
    let mut md = String::from("# Resilience report\n");
    for bm in &report.maps {
        let m = &bm.map;
        let _ = writeln!(md, "\n## Backend `{}`\n", bm.backend_id);
        let _ = writeln!(
            md,
            "Median robustness {:.2}, median recovery {:.2}, seeds per community {}.",
            m.median_robustness, m.median_recovery, bm.seeds
        );
        if m.degenerate_robustness || m.degenerate_recovery {
            md.push_str("\nNormalization is degenerate: at least one dimension has zero range.\n");
        }
        md.push_str("\n| rank | community | robustness | recovery | composite | quadrant |\n|---|---|---|---|---|---|\n");
        for e in &m.entries {
            let _ = writeln!(
                md,
                "| {} | {} | {:.2} | {:.2} | {:.3} | {:?} |",
                e.rank, e.community_id, e.robustness, e.recovery, e.composite, e.quadrant
            );
        }
        let moves: Vec<&Movement> = report.movements.iter().filter(|m| m.backend_id == bm.backend_id).collect();
        if !moves.is_empty() {
            md.push_str("\n| arm | community | Δrobustness | Δrecovery |\n|---|---|---|---|\n");
            for mv in moves {
                let _ = writeln!(
                    md,
                    "| {} | {} | {:+.2} | {:+.2} |",
                    mv.arm, mv.community_id, mv.delta_robustness, mv.delta_recovery
                );
            }
        }
    }
    if !report.arm_shifts.is_empty() {
        md.push_str("\n## Stance shifts versus control (percentage points)\n\n");
        md.push_str("| arm | pairs | window | support | deny | query | comment |\n|---|---|---|---|---|---|---|\n");
        for s in &report.arm_shifts {
            let mut row = |window: &str, sh: &StanceShift| {
                let _ = writeln!(
                    md,
                    "| {} | {} | {window} | {:+.2} | {:+.2} | {:+.2} | {:+.2} |",
                    s.arm, s.pairs, sh.support, sh.deny, sh.query, sh.comment
                );
            };
            row("pre-peak", &s.pre_peak);
            if let Some(post) = &s.post_peak {
                row("post-peak", post);
            }
        }
    }
    md
}

/// Read a metrics CSV (and optionally run logs), then write
/// `report.json`, `report.md` and one `map_<backend>.svg` per backend.
pub fn report(metrics_csv: &Path, log_paths: &[PathBuf], out_dir: &Path) -> Result<Report> {
    let rows = metrics::rows_from_csv(&read_file(metrics_csv)?)?;
    if rows.is_empty() {
        return Err(Error::NoData(format!("{}: no rows", metrics_csv.display())));
    }
    let mut logs = Vec::new();
    for path in collect_inputs(log_paths)? {
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        match RunLog::parse_lenient(&read_file(&path)?) {
            Ok((log, _)) => logs.push(log),
            Err(e) => log::warn!("{}: {e}", path.display()),
        }
    }
    let report = build_report(&rows, &logs)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(&out_dir.join("report.json"), &json)?;
    write_file(&out_dir.join("report.md"), &report_markdown(&report))?;
    for bm in &report.maps {
        let arrows: Vec<metrics::Arrow> = report
            .movements
            .iter()
            .filter(|m| m.backend_id == bm.backend_id)
            .map(|m| (format!("{} {}", m.community_id, m.arm), m.control, m.treated))
            .collect();
        write_file(
            &out_dir.join(format!("map_{}.svg", file_stem(&bm.backend_id))),
            &metrics::map_svg(&bm.map, &arrows),
        )?;
    }
    Ok(report)
}

/// Run the template search on the desk cohort and write
/// `calibration_report.json` under `out_dir`.
pub fn calibrate(config: &RunConfig, backend: &dyn AgentBackend, out_dir: &Path) -> Result<CalibrationReport> {
    backend.probe()?;
    let cohort = calibration::desk_cohort(config.calibration.per_cell);
    let cal = CalibrationConfig {
        iterations: config.calibration.iterations,
        attempts: config.simulation.attempts,
        in_flight: config.calibration.in_flight,
    };
    let result = calibration::calibrate(
        &config.template()?,
        &cohort,
        calibration::standard_items(),
        &config.backgrounds()?,
        backend,
        &cal,
        config.calibration.seed,
    )?;
    let report = CalibrationReport::new(&result, backend.id(), config.calibration.seed)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(&out_dir.join("calibration_report.json"), &json)?;
    Ok(report)
}

/// Score every claim with `backend`, record the score under its id,
/// and write the updated pool to `out`.
pub fn score_pool(pool: &[Claim], backend: &dyn AgentBackend, attempts: usize, out: &Path) -> Result<Vec<Claim>> {
    backend.probe()?;
    let mut scored = pool.to_vec();
    for claim in &mut scored {
        let assessment = claims::score_credibility(claim, backend, attempts)?;
        claim.set_score(backend.id(), assessment.score);
    }
    write_file(out, &claims::pool_to_json(&scored)?)?;
    Ok(scored)
}

/// Load one run log strictly.
pub fn load_log(path: &Path) -> Result<RunLog> {
    RunLog::from_jsonl(&read_file(path)?)
}

/// Trajectory of a run log file.
pub fn load_trajectory(path: &Path) -> Result<TrustTrajectory> {
    load_log(path)?.trajectory()
}
