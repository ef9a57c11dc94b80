//! Resilience scores, stance mechanisms, resilience maps and intervention
//! deltas.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::community::{Community, BAND_COUNT};
use crate::engine::{RoundRecord, RunLog, Stance, TrustTrajectory};
use crate::error::{Error, Result};

pub const DEFAULT_TAU_MAX: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Trapezoid rule with unit step, using compensated (Neumaier) summation
/// so that symmetric shapes such as a linear ramp come out exact.
pub fn trapezoid(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for w in values.windows(2) {
        let x = 0.5 * (w[0] + w[1]);
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Normalized area under the trajectory, in `[0, 100]` for trust in
/// `[0, tau_max]`.
pub fn exposure_score(traj: &TrustTrajectory, tau_max: f64) -> Result<f64> {
    if tau_max.is_nan() || tau_max <= 0.0 {
        return Err(Error::Metric(format!("tau_max must be positive, got {tau_max}")));
    }
    let t = traj.rounds();
    if t == 0 {
        return Err(Error::Metric("exposure needs at least two trajectory points".into()));
    }
    Ok(100.0 * trapezoid(&traj.values) / (t as f64 * tau_max))
}

pub fn robustness(traj: &TrustTrajectory) -> Result<f64> {
    Ok(100.0 - exposure_score(traj, DEFAULT_TAU_MAX)?)
}

/// Earliest index attaining the maximum.
pub fn peak_round(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn recovery(traj: &TrustTrajectory, epsilon: f64) -> f64 {
    let v = &traj.values;
    let peak = v[peak_round(v)];
    let first = v[0];
    let last = v[v.len() - 1];
    100.0 * (peak - last) / (peak - first + epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StanceShares {
    pub support: f64,
    pub deny: f64,
    pub query: f64,
    pub comment: f64,
    /// Records with a stance in the window.
    pub count: usize,
}

impl StanceShares {
    /// No labelled records fell in the window; all shares are zero.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn get(&self, stance: Stance) -> f64 {
        match stance {
            Stance::Support => self.support,
            Stance::Deny => self.deny,
            Stance::Query => self.query,
            Stance::Comment => self.comment,
        }
    }
}

/// Percentage of each stance among labelled records in `rounds`.
pub fn stance_shares<'a>(records: impl IntoIterator<Item = &'a RoundRecord>, rounds: RangeInclusive<usize>) -> StanceShares {
    let mut counts = [0usize; 4];
    for r in records {
        if !rounds.contains(&r.t) {
            continue;
        }
        if let Some(s) = r.stance {
            counts[Stance::ALL.iter().position(|x| *x == s).expect("known stance")] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return StanceShares::default();
    }
    let pct = |c: usize| 100.0 * c as f64 / total as f64;
    StanceShares {
        support: pct(counts[0]),
        deny: pct(counts[1]),
        query: pct(counts[2]),
        comment: pct(counts[3]),
        count: total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismMetrics {
    /// Query share before and at the peak; absent when that window has no
    /// labelled posts.
    pub query_generation: Option<f64>,
    /// Absent when the peak is the final round.
    pub deny_gain: Option<f64>,
    pub support_release: Option<f64>,
    pub peak_round: usize,
}

fn windows(rounds: usize, peak: usize) -> (RangeInclusive<usize>, Option<RangeInclusive<usize>>) {
    let pre = 1..=peak;
    let post = (peak < rounds).then_some(peak + 1..=rounds);
    (pre, post)
}

fn mechanisms_for<'a>(
    records: impl Iterator<Item = &'a RoundRecord> + Clone,
    rounds: usize,
    peak: usize,
) -> MechanismMetrics {
    let (pre_w, post_w) = windows(rounds, peak);
    let pre = stance_shares(records.clone(), pre_w);
    let post = post_w.map(|w| stance_shares(records, w));
    let query_generation = (!pre.is_empty()).then_some(pre.query);
    let (deny_gain, support_release) = match post {
        Some(post) => (Some(post.deny - pre.deny), Some(pre.support - post.support)),
        None => (None, None),
    };
    MechanismMetrics {
        query_generation,
        deny_gain,
        support_release,
        peak_round: peak,
    }
}

pub fn mechanism_metrics(log: &RunLog, traj: &TrustTrajectory) -> MechanismMetrics {
    mechanisms_for(log.records.iter(), traj.rounds(), peak_round(&traj.values))
}

/// Mechanism metrics per `(AOT band, PI band)` cell of agents, using the
/// community-level peak so windows match the run.
pub fn cell_mechanisms(
    log: &RunLog,
    community: &Community,
    traj: &TrustTrajectory,
) -> Result<Vec<CellMechanism>> {
    if community.n() != log.header.n {
        return Err(Error::MetadataMismatch(format!(
            "community has {} agents, log has {}",
            community.n(),
            log.header.n
        )));
    }
    let peak = peak_round(&traj.values);
    let mut out = Vec::new();
    for a in 0..BAND_COUNT {
        for p in 0..BAND_COUNT {
            let members: Vec<bool> = community
                .agents
                .iter()
                .map(|agent| agent.aot.band() == a && agent.pi.band() == p)
                .collect();
            let agents = members.iter().filter(|m| **m).count();
            if agents == 0 {
                continue;
            }
            let records = log.records.iter().filter(|r| members.get(r.agent_id).copied().unwrap_or(false));
            out.push(CellMechanism {
                aot_band: a,
                pi_band: p,
                agents,
                metrics: mechanisms_for(records, traj.rounds(), peak),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMechanism {
    pub aot_band: usize,
    pub pi_band: usize,
    pub agents: usize,
    pub metrics: MechanismMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceScore {
    pub community_id: String,
    pub backend_id: String,
    pub seed: u64,
    pub robustness: f64,
    pub recovery: f64,
    pub exposure: f64,
}

impl ResilienceScore {
    pub fn from_trajectory(community_id: &str, backend_id: &str, seed: u64, traj: &TrustTrajectory) -> Result<Self> {
        let exposure = exposure_score(traj, DEFAULT_TAU_MAX)?;
        Ok(ResilienceScore {
            community_id: community_id.to_string(),
            backend_id: backend_id.to_string(),
            seed,
            robustness: 100.0 - exposure,
            recovery: recovery(traj, DEFAULT_EPSILON),
            exposure,
        })
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub community_id: String,
    pub backend_id: String,
    pub seed: u64,
    pub arm: String,
    pub claim_id: String,
    pub exposure: f64,
    pub robustness: f64,
    pub recovery: f64,
    pub peak_round: usize,
    pub query_generation: Option<f64>,
    pub deny_gain: Option<f64>,
    pub support_release: Option<f64>,
    pub config_hash: String,
    pub version: String,
}

impl MetricsRow {
    pub fn score(&self) -> ResilienceScore {
        ResilienceScore {
            community_id: self.community_id.clone(),
            backend_id: self.backend_id.clone(),
            seed: self.seed,
            robustness: self.robustness,
            recovery: self.recovery,
            exposure: self.exposure,
        }
    }

    fn sort_key(&self) -> (&str, &str, &str, u64, &str) {
        (&self.community_id, &self.backend_id, &self.arm, self.seed, &self.claim_id)
    }
}

pub fn metrics_row(log: &RunLog) -> Result<MetricsRow> {
    let traj = log.trajectory()?;
    let h = &log.header;
    let score = ResilienceScore::from_trajectory(&h.community_id, &h.backend_id, h.seed, &traj)?;
    let mech = mechanism_metrics(log, &traj);
    Ok(MetricsRow {
        community_id: h.community_id.clone(),
        backend_id: h.backend_id.clone(),
        seed: h.seed,
        arm: h.intervention_id.clone(),
        claim_id: h.claim_id.clone(),
        exposure: score.exposure,
        robustness: score.robustness,
        recovery: score.recovery,
        peak_round: mech.peak_round,
        query_generation: mech.query_generation,
        deny_gain: mech.deny_gain,
        support_release: mech.support_release,
        config_hash: h.config_hash.clone(),
        version: h.version.clone(),
    })
}

/// Rows sorted by `(community, backend, arm, seed, claim)`.
pub fn rows_to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in sorted {
        writer
            .serialize(row)
            .map_err(|e| Error::Schema(format!("metrics csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Schema(format!("metrics csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Schema(format!("metrics csv row {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub community_id: String,
    pub robustness: f64,
    pub recovery: f64,
    pub norm_robustness: f64,
    pub norm_recovery: f64,
    pub composite: f64,
    /// 1-based rank by composite.
    pub rank: usize,
    pub quadrant: Quadrant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    HighRobustnessHighRecovery,
    HighRobustnessLowRecovery,
    LowRobustnessHighRecovery,
    LowRobustnessLowRecovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceMap {
    /// Sorted by rank.
    pub entries: Vec<MapEntry>,
    pub median_robustness: f64,
    pub median_recovery: f64,
    /// Dimensions whose range was zero and normalized to 0.5.
    pub degenerate_robustness: bool,
    pub degenerate_recovery: bool,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn min_max(values: &[f64]) -> (Vec<f64>, bool) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        (vec![0.5; values.len()], true)
    } else {
        (values.iter().map(|v| (v - lo) / (hi - lo)).collect(), false)
    }
}

/// Min-max normalize both dimensions, average them, and rank descending
/// (ties by community id). A single score yields a degenerate map.
pub fn resilience_map(scores: &[ResilienceScore]) -> Result<ResilienceMap> {
    if scores.is_empty() {
        return Err(Error::Metric("resilience map needs at least one score".into()));
    }
    if scores.len() < 2 {
        log::warn!("resilience map over a single score: normalization is degenerate");
    }
    let rob: Vec<f64> = scores.iter().map(|s| s.robustness).collect();
    let rec: Vec<f64> = scores.iter().map(|s| s.recovery).collect();
    let (nrob, degenerate_robustness) = min_max(&rob);
    let (nrec, degenerate_recovery) = min_max(&rec);
    let median_robustness = median(&rob);
    let median_recovery = median(&rec);
    let mut entries: Vec<MapEntry> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| MapEntry {
            community_id: s.community_id.clone(),
            robustness: s.robustness,
            recovery: s.recovery,
            norm_robustness: nrob[i],
            norm_recovery: nrec[i],
            composite: 0.5 * (nrob[i] + nrec[i]),
            rank: 0,
            quadrant: match (s.robustness >= median_robustness, s.recovery >= median_recovery) {
                (true, true) => Quadrant::HighRobustnessHighRecovery,
                (true, false) => Quadrant::HighRobustnessLowRecovery,
                (false, true) => Quadrant::LowRobustnessHighRecovery,
                (false, false) => Quadrant::LowRobustnessLowRecovery,
            },
        })
        .collect();
    entries.sort_by(|a, b| {
        b.composite
            .partial_cmp(&a.composite)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.community_id.cmp(&b.community_id))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(ResilienceMap {
        entries,
        median_robustness,
        median_recovery,
        degenerate_robustness,
        degenerate_recovery,
    })
}

/// Treated-minus-control stance shares in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StanceShift {
    pub support: f64,
    pub deny: f64,
    pub query: f64,
    pub comment: f64,
}

impl StanceShift {
    fn between(treated: &StanceShares, control: &StanceShares) -> Self {
        StanceShift {
            support: treated.support - control.support,
            deny: treated.deny - control.deny,
            query: treated.query - control.query,
            comment: treated.comment - control.comment,
        }
    }

    pub fn get(&self, stance: Stance) -> f64 {
        match stance {
            Stance::Support => self.support,
            Stance::Deny => self.deny,
            Stance::Query => self.query,
            Stance::Comment => self.comment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionDelta {
    pub community_id: String,
    pub seed: u64,
    pub arm: String,
    /// Peak of the control trajectory; both arms use its windows.
    pub control_peak: usize,
    pub pre_peak: StanceShift,
    /// Absent when the control peak is the final round.
    pub post_peak: Option<StanceShift>,
    pub delta_robustness: f64,
    pub delta_recovery: f64,
}

pub fn intervention_delta(control: &RunLog, treated: &RunLog) -> Result<InterventionDelta> {
    let (c, t) = (&control.header, &treated.header);
    let mismatches: Vec<&str> = [
        (c.community_id != t.community_id, "community"),
        (c.claim_id != t.claim_id, "claim"),
        (c.seed != t.seed, "seed"),
        (c.backend_id != t.backend_id, "backend"),
        (c.n != t.n, "n"),
        (c.rounds != t.rounds, "rounds"),
        (c.rho != t.rho, "rho"),
    ]
    .into_iter()
    .filter_map(|(bad, name)| bad.then_some(name))
    .collect();
    if !mismatches.is_empty() {
        return Err(Error::MetadataMismatch(format!(
            "control and treated runs differ in {}",
            mismatches.join(", ")
        )));
    }
    let ctraj = control.trajectory()?;
    let ttraj = treated.trajectory()?;
    let peak = peak_round(&ctraj.values);
    let (pre_w, post_w) = windows(c.rounds, peak);
    let pre_peak = StanceShift::between(
        &stance_shares(&treated.records, pre_w.clone()),
        &stance_shares(&control.records, pre_w),
    );
    let post_peak = post_w.map(|w| {
        StanceShift::between(
            &stance_shares(&treated.records, w.clone()),
            &stance_shares(&control.records, w),
        )
    });
    Ok(InterventionDelta {
        community_id: c.community_id.clone(),
        seed: c.seed,
        arm: t.intervention_id.clone(),
        control_peak: peak,
        pre_peak,
        post_peak,
        delta_robustness: robustness(&ttraj)? - robustness(&ctraj)?,
        delta_recovery: recovery(&ttraj, DEFAULT_EPSILON) - recovery(&ctraj, DEFAULT_EPSILON),
    })
}

/// Movement arrow: label, `(robustness, recovery)` from, and to.
pub type Arrow = (String, (f64, f64), (f64, f64));

/// Scatter of robustness against recovery with median-split lines and
/// optional movement arrows.
pub fn map_svg(map: &ResilienceMap, arrows: &[Arrow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 60.0;
    let mut xs: Vec<f64> = map.entries.iter().map(|e| e.robustness).collect();
    let mut ys: Vec<f64> = map.entries.iter().map(|e| e.recovery).collect();
    for (_, a, b) in arrows {
        xs.extend([a.0, b.0]);
        ys.extend([a.1, b.1]);
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let margin = ((hi - lo) * 0.08).max(1.0);
        (lo - margin, hi + margin)
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r##"<defs><marker id="head" markerWidth="8" markerHeight="8" refX="6" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#c0392b"/></marker></defs>"##
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let mx = px(map.median_robustness);
    let my = py(map.median_recovery);
    let _ = writeln!(
        s,
        r#"<line x1="{mx:.2}" y1="{PAD}" x2="{mx:.2}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{my:.2}" x2="{}" y2="{my:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
        W - PAD
    );
    for e in &map.entries {
        let (cx, cy) = (px(e.robustness), py(e.recovery));
        let _ = writeln!(s, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="#2c3e50"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            cx + 6.0,
            cy - 6.0,
            xml_escape(&e.community_id)
        );
    }
    for (label, a, b) in arrows {
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c0392b" marker-end="url(#head)"><title>{}</title></line>"##,
            px(a.0),
            py(a.1),
            px(b.0),
            py(b.1),
            xml_escape(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Robustness</text>"#,
        W / 2.0,
        H - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">Recovery</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(v: &[f64]) -> TrustTrajectory {
        TrustTrajectory::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exposure_bounds() {
        assert_eq!(exposure_score(&traj(&[0.0; 11]), 1.0).unwrap(), 0.0);
        assert_eq!(exposure_score(&traj(&[1.0; 11]), 1.0).unwrap(), 100.0);
        assert!(exposure_score(&traj(&[0.0, 1.0]), 0.0).is_err());
        assert!(exposure_score(&traj(&[0.0]), 1.0).is_err());
    }

    #[test]
    fn peak_rule() {
        assert_eq!(peak_round(&[0.0, 0.2, 0.6, 0.6, 0.4]), 2);
        assert_eq!(peak_round(&[0.0, 0.1, 0.2]), 2);
        assert_eq!(peak_round(&[0.3, 0.3, 0.3]), 0);
    }

    #[test]
    fn flat_recovery_is_zero() {
        assert_eq!(recovery(&traj(&[0.4, 0.4, 0.4]), DEFAULT_EPSILON), 0.0);
    }

    #[test]
    fn degenerate_map() {
        let s = ResilienceScore {
            community_id: "G02".into(),
            backend_id: "b".into(),
            seed: 0,
            robustness: 50.0,
            recovery: 10.0,
            exposure: 50.0,
        };
        let mut t = s.clone();
        t.community_id = "G01".into();
        let map = resilience_map(&[s, t]).unwrap();
        assert!(map.degenerate_robustness && map.degenerate_recovery);
        assert_eq!(map.entries[0].community_id, "G01");
        assert!(map.entries.iter().all(|e| e.composite == 0.5));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let scores: Vec<ResilienceScore> = (0..3)
            .map(|i| ResilienceScore {
                community_id: format!("G0{i}"),
                backend_id: "b".into(),
                seed: 0,
                robustness: 40.0 + i as f64,
                recovery: 5.0 * i as f64,
                exposure: 60.0 - i as f64,
            })
            .collect();
        let map = resilience_map(&scores).unwrap();
        let svg = map_svg(&map, &[("G00".into(), (40.0, 0.0), (45.0, 3.0))]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("marker-end"));
    }
}
