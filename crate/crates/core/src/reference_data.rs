//! Published community scores and reference trajectories.
//!
//! The score table lists robustness and recovery for the sixteen community
//! types under four model backbones. Per-round trajectories were not
//! published, so the bundled trajectory file is synthesized: a piecewise
//! linear curve that rises from 0 to a peak at round 3 and declines
//! linearly to round 10, with the peak height and final value solved so
//! that the trapezoid-rule scores reproduce the table exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::TrustTrajectory;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_EPSILON;

pub const SCORE_TABLE_CSV: &str = include_str!("../assets/reference/rq1_table.csv");
pub const TRAJECTORIES_CSV: &str = include_str!("../assets/reference/rq1_trajectories.csv");

/// Backbone whose column is the primary regression fixture.
pub const PRIMARY_BACKBONE: &str = "Qwen3-4B";

pub const SYNTH_ROUNDS: usize = 10;
pub const SYNTH_PEAK_ROUND: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub community_id: String,
    pub aot_profile: String,
    pub pi_profile: String,
    pub backbone: String,
    pub robustness: f64,
    pub recovery: f64,
}

pub fn score_table() -> Result<Vec<TableRow>> {
    let mut reader = csv::Reader::from_reader(SCORE_TABLE_CSV.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Schema(format!("score table: {e}"))))
        .collect()
}

/// A trajectory whose robustness and recovery equal the given scores.
pub fn synthesize_trajectory(robustness: f64, recovery: f64, rounds: usize, peak_round: usize) -> Result<TrustTrajectory> {
    if peak_round == 0 || peak_round >= rounds {
        return Err(Error::Config(format!(
            "peak round {peak_round} must lie strictly inside 1..{rounds}"
        )));
    }
    let t = rounds as f64;
    let p = peak_round as f64;
    let tail = t - p;
    let area = (100.0 - robustness) * t / 100.0;
    let r = recovery / 100.0;
    // area = peak * (p/2 + tail * (1 - r/2)) - tail * r * eps / 2
    let peak = (area + tail * r * DEFAULT_EPSILON / 2.0) / (p / 2.0 + tail * (1.0 - r / 2.0));
    let last = peak - r * (peak + DEFAULT_EPSILON);
    if !(0.0..=1.0).contains(&peak) || last < 0.0 {
        return Err(Error::Metric(format!(
            "scores ({robustness}, {recovery}) have no trajectory of this shape"
        )));
    }
    let values = (0..=rounds)
        .map(|i| {
            let i = i as f64;
            if i <= p {
                peak * i / p
            } else {
                peak + (last - peak) * (i - p) / tail
            }
        })
        .collect();
    TrustTrajectory::new(values)
}

/// One row of a long-format trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub community_id: String,
    pub backend_id: String,
    pub seed: u64,
    pub arm: String,
    pub round: usize,
    pub trust: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrajectoryKey {
    pub community_id: String,
    pub backend_id: String,
    pub seed: u64,
    pub arm: String,
}

pub const TRAJECTORY_HEADER: &str = "community_id,backend_id,seed,arm,round,trust";

/// Group rows into trajectories; rounds of each key must be `0..=T`.
pub fn parse_trajectories(text: &str) -> Result<BTreeMap<TrajectoryKey, TrustTrajectory>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut grouped: BTreeMap<TrajectoryKey, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<TrajectoryRow>().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("trajectory row {}: {e}", i + 1)))?;
        grouped
            .entry(TrajectoryKey {
                community_id: row.community_id,
                backend_id: row.backend_id,
                seed: row.seed,
                arm: row.arm,
            })
            .or_default()
            .push((row.round, row.trust));
    }
    grouped
        .into_iter()
        .map(|(key, mut points)| {
            points.sort_by_key(|(round, _)| *round);
            if points.iter().enumerate().any(|(i, (round, _))| *round != i) {
                return Err(Error::Schema(format!(
                    "trajectory {}/{}/{}: rounds are not 0..=T",
                    key.community_id, key.backend_id, key.seed
                )));
            }
            let traj = TrustTrajectory::new(points.into_iter().map(|(_, v)| v).collect())?;
            Ok((key, traj))
        })
        .collect()
}

pub fn trajectories_to_csv(trajectories: &BTreeMap<TrajectoryKey, TrustTrajectory>, decimals: usize) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (key, traj) in trajectories {
        for (round, v) in traj.values.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{round},{v:.decimals$}\n",
                key.community_id, key.backend_id, key.seed, key.arm
            ));
        }
    }
    out
}

/// Synthesized trajectories for every table row, keyed by backbone.
pub fn synthesize_reference() -> Result<BTreeMap<TrajectoryKey, TrustTrajectory>> {
    score_table()?
        .into_iter()
        .map(|row| {
            let traj = synthesize_trajectory(row.robustness, row.recovery, SYNTH_ROUNDS, SYNTH_PEAK_ROUND)?;
            Ok((
                TrajectoryKey {
                    community_id: row.community_id,
                    backend_id: row.backbone,
                    seed: 0,
                    arm: "control".to_string(),
                },
                traj,
            ))
        })
        .collect()
}

/// Decimal places used in the bundled trajectory file.
pub const TRAJECTORY_DECIMALS: usize = 10;

/// Aggregate values reported at full scale, for side-by-side rendering
/// in reports. These are not reproduced by the desk-scale backend.
pub mod published {
    /// Mean calibration alignment: RMSE, MAE, five-band accuracy, macro-F1.
    pub const ALIGNMENT: (f64, f64, f64, f64) = (0.095, 0.077, 0.778, 0.711);
    /// Query generation in the lowest and highest AOT rows (percent).
    pub const QUERY_GENERATION_RANGE: (f64, f64) = (25.31, 41.93);
    /// Deny gain range across PI columns (percentage points).
    pub const DENY_GAIN_RANGE: (f64, f64) = (4.88, 14.38);

    /// Stance shift relative to control, percentage points.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Shift {
        pub arm: &'static str,
        pub window: &'static str,
        pub stance: &'static str,
        pub value: f64,
    }

    pub const STANCE_SHIFTS: &[Shift] = &[
        Shift { arm: "accuracy_prompt", window: "pre_peak", stance: "support", value: -3.90 },
        Shift { arm: "accuracy_prompt", window: "pre_peak", stance: "query", value: 5.43 },
        Shift { arm: "accuracy_prompt", window: "post_peak", stance: "support", value: -2.45 },
        Shift { arm: "accuracy_prompt", window: "post_peak", stance: "deny", value: 1.73 },
        Shift { arm: "persuasion", window: "post_peak", stance: "support", value: -6.62 },
        Shift { arm: "persuasion", window: "post_peak", stance: "deny", value: 6.95 },
        Shift { arm: "fact_check", window: "post_peak", stance: "support", value: -4.60 },
        Shift { arm: "fact_check", window: "post_peak", stance: "deny", value: 4.70 },
    ];

    /// `(community, (robustness, recovery) control, treated)`.
    pub type Move = (&'static str, (f64, f64), (f64, f64));

    /// Persuasion movement per representative community.
    pub const PERSUASION_MOVES: &[Move] = &[
        ("G01", (37.69, 2.79), (48.15, 18.95)),
        ("G13", (52.12, 14.79), (57.95, 28.55)),
        ("G10", (58.03, 23.26), (63.60, 35.10)),
        ("G11", (56.09, 4.65), (59.75, 15.85)),
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{recovery, robustness};

    #[test]
    fn table_has_sixteen_rows_per_backbone() {
        let rows = score_table().unwrap();
        assert_eq!(rows.len(), 64);
        assert_eq!(rows.iter().filter(|r| r.backbone == PRIMARY_BACKBONE).count(), 16);
    }

    #[test]
    fn synthesis_inverts_the_scores() {
        let traj = synthesize_trajectory(58.03, 23.26, 10, 3).unwrap();
        assert_eq!(traj.values.len(), 11);
        assert_eq!(traj.values[0], 0.0);
        assert!((robustness(&traj).unwrap() - 58.03).abs() < 1e-9);
        assert!((recovery(&traj, DEFAULT_EPSILON) - 23.26).abs() < 1e-9);
        assert!(synthesize_trajectory(0.0, 0.0, 10, 3).is_err());
        assert!(synthesize_trajectory(50.0, 5.0, 10, 10).is_err());
    }

    #[test]
    fn bundled_trajectories_match_synthesis() {
        let expected = trajectories_to_csv(&synthesize_reference().unwrap(), TRAJECTORY_DECIMALS);
        assert_eq!(TRAJECTORIES_CSV, expected);
        let parsed = parse_trajectories(TRAJECTORIES_CSV).unwrap();
        assert_eq!(parsed.len(), 64);
    }

    #[test]
    fn malformed_trajectory_files_are_rejected() {
        let gap = format!("{TRAJECTORY_HEADER}\nG01,b,0,control,0,0.0\nG01,b,0,control,2,0.1\n");
        assert!(parse_trajectories(&gap).is_err());
        let bad = format!("{TRAJECTORY_HEADER}\nG01,b,x,control,0,0.0\n");
        assert!(parse_trajectories(&bad).is_err());
    }
}
